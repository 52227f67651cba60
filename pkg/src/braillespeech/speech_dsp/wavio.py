"""PCM16 mono WAV files via the standard library ``wave`` module."""

from __future__ import annotations

import wave

import numpy as np

from braillespeech.errors import BadHeader, EmptyWaveform, IoFailure, NonFiniteInput, UnsupportedFormat
from braillespeech.speech_dsp.core import DEFAULT


def wav_write(path, waveform, sampling_rate=DEFAULT.sampling_rate, scale=DEFAULT.max_wav):
    x = np.asarray(waveform, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise EmptyWaveform("refusing to write an empty waveform")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("waveform contains non-finite samples")
    pcm = np.clip(np.round(x * scale), -32768, 32767).astype("<i2")
    try:
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(int(sampling_rate))
            fh.writeframes(pcm.tobytes())
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def wav_read(path, scale=DEFAULT.max_wav):
    """Returns ``(waveform float32 in [-1, 1), sampling_rate)``."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate, n = fh.getnchannels(), fh.getsampwidth(), fh.getframerate(), fh.getnframes()
            if channels != 1 or width != 2:
                raise UnsupportedFormat(f"{path}: need PCM16 mono, got {channels} channel(s) of {8 * width} bit")
            raw = fh.readframes(n)
    except wave.Error as exc:
        raise BadHeader(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise BadHeader(f"{path}: truncated header") from exc
    except FileNotFoundError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    if len(raw) != 2 * n:
        raise BadHeader(f"{path}: header declares {n} samples, file holds {len(raw) // 2}")
    return (np.frombuffer(raw, dtype="<i2").astype(np.float32) / scale), rate
