"""STFT, mel filterbank, frame energy, Griffin-Lim inversion and mel-cepstral distortion."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dct
from scipy.signal import get_window

from braillespeech.errors import BadHeader, EmptyInput, EmptyWaveform, NonFiniteInput

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-5
PCM16_SCALE = 32768


@dataclass(frozen=True)
class DspConfig:
    sampling_rate: int = 16000
    filter_length: int = 1024
    hop_length: int = 256
    win_length: int = 1024
    mel_channels: int = 80
    mel_fmin: float = 0.0
    mel_fmax: float = 8000.0
    max_wav: int = PCM16_SCALE

    def __post_init__(self):
        if self.hop_length > self.filter_length or self.win_length > self.filter_length:
            raise ValueError("hop and window must not exceed the FFT size")
        if not 0 <= self.mel_fmin < self.mel_fmax <= self.sampling_rate / 2:
            raise ValueError("need 0 <= mel_fmin < mel_fmax <= sampling_rate / 2")
        if self.max_wav == 32786:
            log.warning("max_wav 32786 read as the PCM16 full scale 32768")
            object.__setattr__(self, "max_wav", PCM16_SCALE)

    @property
    def n_bins(self):
        return self.filter_length // 2 + 1


DEFAULT = DspConfig()


def _window(cfg):
    win = get_window("hann", cfg.win_length, fftbins=True)
    if cfg.win_length < cfg.filter_length:
        lpad = (cfg.filter_length - cfg.win_length) // 2
        win = np.pad(win, (lpad, cfg.filter_length - cfg.win_length - lpad))
    return win


def n_frames(n_samples, cfg=DEFAULT):
    return 1 + math.ceil(n_samples / cfg.hop_length)


def _frames(wave, cfg):
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1 or wave.size == 0:
        raise EmptyWaveform("waveform must be a nonempty 1-D array")
    if not np.all(np.isfinite(wave)):
        raise NonFiniteInput("waveform contains non-finite samples")
    half = cfg.filter_length // 2
    mode = "reflect" if wave.size > 1 else "edge"
    padded = np.pad(wave, half, mode=mode)
    count = n_frames(wave.size, cfg)
    need = (count - 1) * cfg.hop_length + cfg.filter_length
    if padded.size < need:
        padded = np.pad(padded, (0, need - padded.size))
    view = np.lib.stride_tricks.sliding_window_view(padded, cfg.filter_length)[::cfg.hop_length][:count]
    return view * _window(cfg)


def stft_complex(wave, cfg=DEFAULT):
    """Centred STFT, ``[frames, bins]`` complex."""
    return np.fft.rfft(_frames(wave, cfg), axis=1)


def stft(wave, cfg=DEFAULT):
    """Magnitude spectrogram ``[frames, filter_length // 2 + 1]``."""
    return np.abs(stft_complex(wave, cfg))


def istft(spec, n_samples, cfg=DEFAULT):
    """Weighted overlap-add inverse of ``stft_complex`` for a signal of ``n_samples``."""
    frames = np.fft.irfft(spec, n=cfg.filter_length, axis=1)
    win = _window(cfg)
    half = cfg.filter_length // 2
    total = (spec.shape[0] - 1) * cfg.hop_length + cfg.filter_length
    out = np.zeros(total)
    norm = np.zeros(total)
    for t in range(spec.shape[0]):
        s = t * cfg.hop_length
        out[s:s + cfg.filter_length] += frames[t] * win
        norm[s:s + cfg.filter_length] += win * win
    out = np.where(norm > 1e-8, out / np.maximum(norm, 1e-8), 0.0)
    return out[half:half + n_samples]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(cfg=DEFAULT):
    """Triangular HTK-scale filters, ``[mel_channels, bins]``, peak value 1."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.mel_fmax), cfg.mel_channels + 2))
    freqs = np.arange(cfg.n_bins) * cfg.sampling_rate / cfg.filter_length
    fb = np.zeros((cfg.mel_channels, cfg.n_bins))
    for m in range(cfg.mel_channels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=8)
def mel_center_frequencies(cfg=DEFAULT):
    return mel_to_hz(np.linspace(hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.mel_fmax), cfg.mel_channels + 2))[1:-1]


def mel_from_magnitude(mag, cfg=DEFAULT):
    power = np.asarray(mag, dtype=np.float64) ** 2
    return np.log(np.maximum(power @ mel_filterbank(cfg).T, LOG_FLOOR))


def mel_spectrogram(wave, cfg=DEFAULT):
    """Log-mel spectrogram ``[frames, mel_channels]`` of the power spectrum."""
    return mel_from_magnitude(stft(wave, cfg), cfg)


def frame_energy(mag):
    """Per-frame L2 norm of the magnitude spectrum."""
    mag = np.asarray(mag, dtype=np.float64)
    if mag.size == 0:
        raise EmptyInput("empty spectrogram")
    return np.sqrt((mag * mag).sum(axis=1))


@lru_cache(maxsize=8)
def _mel_pinv(cfg):
    inv = np.linalg.pinv(mel_filterbank(cfg))
    inv.setflags(write=False)
    return inv


def mel_to_magnitude(mel, cfg=DEFAULT, refine=300):
    """Approximate linear magnitude from log-mel.

    Starts from the clipped filterbank pseudo-inverse, then runs ``refine``
    multiplicative non-negative least-squares updates, which pull energy back
    toward the bins that actually produced it instead of smearing it.
    """
    mel = np.asarray(mel, dtype=np.float64)
    if not np.all(np.isfinite(mel)):
        raise NonFiniteInput("mel contains non-finite values")
    power = np.maximum(np.exp(mel) - LOG_FLOOR, 0.0)
    fb = mel_filterbank(cfg)
    est = np.maximum(power @ _mel_pinv(cfg).T, 1e-12)
    target = power @ fb
    gram = fb.T @ fb
    for _ in range(refine):
        est *= target / np.maximum(est @ gram, 1e-30)
    est[power.sum(axis=1) == 0] = 0.0
    return np.sqrt(est)


def spectral_convergence(target_mag, wave, cfg=DEFAULT):
    est = stft(wave, cfg)[: target_mag.shape[0]]
    denom = np.linalg.norm(target_mag)
    return float(np.linalg.norm(target_mag - est) / denom) if denom > 0 else float(np.linalg.norm(est))


def griffin_lim_magnitude(mag, iterations=60, cfg=DEFAULT, seed=0, history=None):
    """Phase retrieval for a magnitude spectrogram ``[frames, bins]``."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    mag = np.asarray(mag, dtype=np.float64)
    if not np.all(np.isfinite(mag)):
        raise NonFiniteInput("magnitude contains non-finite values")
    n_samples = max((mag.shape[0] - 1) * cfg.hop_length, 1)
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(mag.shape))
    wave = istft(mag * phase, n_samples, cfg)
    for _ in range(iterations - 1):
        spec = stft_complex(wave, cfg)
        phase = np.exp(1j * np.angle(spec))
        wave = istft(mag * phase, n_samples, cfg)
        if history is not None:
            history.append(spectral_convergence(mag, wave, cfg))
    return wave


def griffin_lim(mel, iterations=60, cfg=DEFAULT, peak=0.95, seed=0, history=None):
    """Invert a log-mel spectrogram to a waveform, peak-normalised to ``peak``."""
    wave = griffin_lim_magnitude(mel_to_magnitude(mel, cfg), iterations, cfg, seed, history)
    top = np.max(np.abs(wave)) if wave.size else 0.0
    if top > 0:
        wave = wave * (peak / top)
    return wave.astype(np.float32)


MCD_CONST = 10.0 * math.sqrt(2.0) / math.log(10.0)


def mel_cepstrum(mel, n_coeffs=13):
    """c1..c_n of the orthonormal DCT-II of each log-mel frame (c0 dropped)."""
    return dct(np.asarray(mel, dtype=np.float64), type=2, norm="ortho", axis=1)[:, 1:n_coeffs + 1]


def mcd(mel_ref, mel_test, n_coeffs=13):
    """Mean mel-cepstral distortion in dB over frames, truncated to the shorter input."""
    a, b = np.asarray(mel_ref), np.asarray(mel_test)
    if a.size == 0 or b.size == 0:
        raise EmptyInput("mcd needs two nonempty mel spectrograms")
    n = min(a.shape[0], b.shape[0])
    diff = mel_cepstrum(a[:n], n_coeffs) - mel_cepstrum(b[:n], n_coeffs)
    return float(MCD_CONST * np.mean(np.sqrt((diff * diff).sum(axis=1))))


def mean_mcd(pairs):
    values = [mcd(a, b) for a, b in pairs]
    if not values:
        raise EmptyInput("no utterance pairs")
    return float(np.mean(values))


def write_mel(path, mel):
    mel = np.asarray(mel, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", *mel.shape))
        fh.write(mel.tobytes())


def read_mel(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise BadHeader(f"{path}: truncated mel header")
    frames, channels = struct.unpack("<II", raw[:8])
    body = raw[8:]
    if len(body) != 4 * frames * channels:
        raise BadHeader(f"{path}: expected {frames}x{channels} floats")
    return np.frombuffer(body, dtype="<f4").reshape(frames, channels).copy()
