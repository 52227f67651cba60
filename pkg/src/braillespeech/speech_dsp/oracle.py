"""Parametric speech oracle.

Every text unit is read as a sequence of (initial, final, tone) syllables.
Initials become band-shaped noise bursts, finals become harmonic stacks whose
spectral envelope glides between vowel formant targets and whose F0 follows
one of four tone templates. Durations are fixed per phoneme class, so the
duration, pitch, energy and mel targets are known exactly by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from braillespeech.braille_codec.cells import APICAL_INITIALS, Kind, TextUnit, split_pinyin
from braillespeech.errors import EmptyInput, UnknownPhoneme
from braillespeech.speech_dsp.core import DEFAULT, frame_energy, mel_from_magnitude, stft
from braillespeech.speech_dsp.pitch import PitchSpectrogram, cwt_pitch

DIGIT_READINGS = dict(zip("0123456789", "ling2 yi1 er4 san1 si4 wu3 liu4 qi1 ba1 jiu3".split()))
# names of the punctuation marks, e.g. the full stop is read "ju4 hao4"
PUNCT_READINGS = dict(zip("。，、；：？！", "ju4 dou4 dun4 fen1 mao4 wen4 tan4".split()))
PUNCT_SUFFIX = "hao4"

# initial -> (duration frames, band centre Hz, bandwidth Hz, kind)
INITIALS = {
    "b": (4, 500, 300, "stop"), "p": (5, 800, 600, "stop"), "m": (4, 300, 150, "sonorant"),
    "f": (6, 1800, 1500, "fricative"), "d": (4, 2500, 500, "stop"), "t": (5, 3000, 900, "stop"),
    "n": (4, 400, 200, "sonorant"), "l": (4, 600, 300, "sonorant"), "g": (4, 1500, 400, "stop"),
    "k": (5, 1700, 800, "stop"), "h": (6, 1100, 700, "fricative"), "j": (5, 3200, 500, "affricate"),
    "q": (5, 3600, 800, "affricate"), "x": (6, 4500, 900, "fricative"), "zh": (5, 2800, 400, "affricate"),
    "ch": (5, 3000, 700, "affricate"), "sh": (6, 3500, 700, "fricative"), "r": (6, 1900, 300, "fricative"),
    "z": (5, 5000, 600, "affricate"), "c": (5, 5500, 900, "affricate"), "s": (6, 6200, 900, "fricative"),
}
VOWELS = {
    "a": (850, 1300), "o": (550, 900), "e": (500, 1300), "i": (300, 2300), "u": (320, 800),
    "ü": (300, 1900), "er": (500, 1500), "ê": (550, 1900), "-i": (350, 1500),
    "N": (250, 1700), "NG": (250, 1000),
}
FINALS = {
    "a": ["a"], "o": ["o"], "e": ["e"], "i": ["i"], "u": ["u"], "ü": ["ü"], "er": ["er"], "-i": ["-i"],
    "ai": ["a", "i"], "ao": ["a", "u"], "ei": ["ê", "i"], "ou": ["o", "u"], "ia": ["i", "a"],
    "iao": ["i", "a", "u"], "ie": ["i", "ê"], "iu": ["i", "o", "u"], "ua": ["u", "a"], "uo": ["u", "o"],
    "uai": ["u", "a", "i"], "ui": ["u", "ê", "i"], "üe": ["ü", "ê"],
    "an": ["a", "N"], "en": ["e", "N"], "ang": ["a", "NG"], "eng": ["e", "NG"], "ian": ["i", "ê", "N"],
    "in": ["i", "N"], "iang": ["i", "a", "NG"], "ing": ["i", "NG"], "uan": ["u", "a", "N"],
    "un": ["u", "e", "N"], "uang": ["u", "a", "NG"], "ong": ["u", "NG"], "üan": ["ü", "ê", "N"],
    "ün": ["ü", "N"], "iong": ["i", "u", "NG"],
}
TONES = (1, 2, 3, 4)
NOISE_FLOOR = 1e-3


def final_duration(final, tone):
    targets = FINALS[final]
    base = 16 if targets[-1] in ("N", "NG") else (14 if len(targets) > 1 else 12)
    return base + (2 if tone == 3 else 0)


def tone_f0(tone, tau):
    """F0 in Hz over normalised time ``tau`` in [0, 1]."""
    tau = np.asarray(tau, dtype=np.float64)
    if tone == 1:
        return np.full_like(tau, 240.0)
    if tone == 2:
        return 175.0 + 90.0 * tau
    if tone == 3:
        return 200.0 - 140.0 * tau + 130.0 * tau * tau
    if tone == 4:
        return 275.0 - 115.0 * tau
    raise UnknownPhoneme(f"tone {tone}")


def final_phoneme(initial, final, tone):
    name = "-i" if (initial in APICAL_INITIALS and final == "i") else final
    return f"{name}{tone}"


def phoneme_inventory():
    """All phoneme symbols in a fixed order: initials, then final+tone."""
    return list(INITIALS) + [f"{f}{t}" for f in FINALS for t in TONES]


def _reading(spelled):
    return split_pinyin(spelled[:-1]) + (int(spelled[-1]),)


def unit_syllables(unit):
    """``TextUnit`` -> list of ``(initial, final, tone)`` readings."""
    if isinstance(unit, tuple):
        return [unit]
    if unit.kind is Kind.SPELL:
        return [(unit.initial, unit.final, unit.tone)]
    if unit.kind is Kind.NUMBER:
        return [_reading(DIGIT_READINGS[d]) for d in unit.digits]
    if unit.punct not in PUNCT_READINGS:
        raise UnknownPhoneme(f"no reading for punctuation {unit.punct!r}")
    return [_reading(PUNCT_READINGS[unit.punct]), _reading(PUNCT_SUFFIX)]


def syllable_phonemes(initial, final, tone):
    if initial and initial not in INITIALS:
        raise UnknownPhoneme(f"initial {initial!r}")
    if final not in FINALS or tone not in TONES:
        raise UnknownPhoneme(f"final {final!r} tone {tone!r}")
    fin = final_phoneme(initial, final, tone)
    return ([initial] if initial else []) + [fin]


def text_phonemes(units):
    out = []
    for unit in units:
        for ini, fin, tone in unit_syllables(unit):
            out.extend(syllable_phonemes(ini, fin, tone))
    return out


def phoneme_duration(ph):
    if ph in INITIALS:
        return INITIALS[ph][0]
    fin, tone = ph[:-1], int(ph[-1])
    if fin not in FINALS:
        raise UnknownPhoneme(ph)
    return final_duration(fin, tone)


@dataclass
class OracleUtterance:
    waveform: np.ndarray
    phonemes: list
    durations: np.ndarray
    f0: np.ndarray
    energy: np.ndarray
    mel: np.ndarray
    units: list = field(default_factory=list)

    @property
    def n_frames(self):
        return int(self.durations.sum())

    def pitch(self) -> PitchSpectrogram:
        return cwt_pitch(self.f0)


def _raised_cosine(n, ramp):
    env = np.ones(n)
    r = min(ramp, n // 2)
    if r > 0:
        w = 0.5 - 0.5 * np.cos(np.pi * (np.arange(r) + 0.5) / r)
        env[:r] = w
        env[n - r:] = w[::-1]
    return env


def _noise_burst(n, initial, rng, sr):
    _, centre, bw, kind = INITIALS[initial]
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec *= np.exp(-0.5 * ((freqs - centre) / bw) ** 2)
    x = np.fft.irfft(spec, n)
    x /= max(np.sqrt(np.mean(x * x)), 1e-12)
    env = _raised_cosine(n, int(0.006 * sr))
    if kind in ("stop", "affricate"):
        onset = int(n * (0.45 if kind == "stop" else 0.25))
        env[:onset] = 0.0
        tail = np.arange(n - onset)
        env[onset:] *= np.exp(-tail / max(1.0, 0.4 * (n - onset)))
    level = {"stop": 0.10, "affricate": 0.08, "fricative": 0.06, "sonorant": 0.05}[kind]
    return level * x * env


def _harmonic_stack(n, final_name, tone, sr):
    tau = (np.arange(n) + 0.5) / n
    f0 = tone_f0(tone, tau)
    phase = 2.0 * np.pi * np.cumsum(f0) / sr
    targets = FINALS[final_name]
    at = (np.arange(len(targets)) + 0.5) / len(targets)
    f1 = np.interp(tau, at, [VOWELS[v][0] for v in targets])
    f2 = np.interp(tau, at, [VOWELS[v][1] for v in targets])
    gain = np.interp(tau, at, [0.35 if v in ("N", "NG") else 1.0 for v in targets])
    x = np.zeros(n)
    for k in range(1, int(7600 // f0.min()) + 1):
        fk = k * f0
        amp = (np.exp(-0.5 * ((fk - f1) / 90.0) ** 2) + 0.7 * np.exp(-0.5 * ((fk - f2) / 120.0) ** 2)
               + 0.25 * np.exp(-0.5 * ((fk - 2800.0) / 200.0) ** 2) + 0.02) / (1.0 + fk / 1500.0)
        x += np.where(fk < 7600.0, amp, 0.0) * np.sin(k * phase)
    x /= max(np.sqrt(np.mean(x * x)), 1e-12)
    return 0.12 * gain * x * _raised_cosine(n, int(0.008 * sr))


def synth_phonemes(phonemes, seed=0, cfg=DEFAULT):
    """Synthesise a phoneme sequence; returns waveform, durations and frame F0."""
    if not phonemes:
        raise EmptyInput("no phonemes to synthesise")
    durations = np.array([phoneme_duration(p) for p in phonemes], dtype=np.int64)
    n_frames = int(durations.sum())
    hop, sr = cfg.hop_length, cfg.sampling_rate
    length = max((n_frames - 1) * hop, 1)
    rng = np.random.default_rng(seed)
    # faint background noise keeps every mel bin above the log floor
    wave = NOISE_FLOOR * rng.standard_normal(length)
    f0 = np.zeros(n_frames)
    start = 0
    for ph, d in zip(phonemes, durations):
        a = max(start * hop - hop // 2, 0)
        b = min((start + d) * hop - hop // 2, length)
        if ph in INITIALS:
            if b > a:
                wave[a:b] += _noise_burst(b - a, ph, rng, sr)
        else:
            fin, tone = ph[:-1], int(ph[-1])
            f0[start:start + d] = tone_f0(tone, (np.arange(d) + 0.5) / d)
            if b > a:
                wave[a:b] += _harmonic_stack(b - a, fin, tone, sr)
        start += d
    return wave.astype(np.float32), durations, f0


def synth_oracle(units, seed=0, cfg=DEFAULT):
    """Deterministic utterance for a list of ``TextUnit`` (or ``(initial, final, tone)`` tuples)."""
    if isinstance(units, (TextUnit, tuple)):
        units = [units]
    units = list(units)
    phonemes = text_phonemes(units)
    wave, durations, f0 = synth_phonemes(phonemes, seed, cfg)
    mag = stft(wave, cfg)
    return OracleUtterance(wave, phonemes, durations, f0, frame_energy(mag), mel_from_magnitude(mag, cfg), units)
