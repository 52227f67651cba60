"""Mel -> syllable template decoder.

The bank holds one oracle mel per syllable (initial + final + tone). A mel
is cut into syllable segments at the given frame boundaries and each segment
is time-stretched to every template's length and scored by mel-cepstral
distortion; the closest template wins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from braillespeech.errors import EmptyBank, EmptyInput
from braillespeech.speech_dsp.core import MCD_CONST, mel_cepstrum
from braillespeech.speech_dsp.oracle import syllable_phonemes, synth_oracle

# a segment whose mean log-mel sits this far below the quietest template is silence
SILENCE_MARGIN = 3.0


@dataclass(frozen=True)
class Decoded:
    syllable: str
    confidence: float
    distance: float


def syllable_name(initial, final, tone):
    from braillespeech.braille_codec.cells import spelling

    return f"{spelling(initial, final)}{tone}"


@dataclass
class TemplateBank:
    names: list
    mels: list
    phonemes: list

    def __post_init__(self):
        if not self.names:
            raise EmptyBank("template bank is empty")
        self.levels = np.array([float(np.mean(m)) for m in self.mels])
        # cepstra are precomputed; stretching commutes with the (linear) DCT
        self.cepstra = [mel_cepstrum(m) for m in self.mels]
        self.lengths = np.array([m.shape[0] for m in self.mels])

    def __len__(self):
        return len(self.names)

    @property
    def quietest(self):
        return int(np.argmin(self.levels))


def build_bank(syllables, seed=0):
    """``syllables``: iterable of ``(initial, final, tone)``; duplicates are dropped."""
    names, mels, phones = [], [], []
    seen = set()
    for ini, fin, tone in syllables:
        name = syllable_name(ini, fin, tone)
        if name in seen:
            continue
        seen.add(name)
        utt = synth_oracle((ini, fin, tone), seed=seed)
        names.append(name)
        mels.append(utt.mel)
        phones.append(syllable_phonemes(ini, fin, tone))
    return TemplateBank(names, mels, phones)


def table_bank(table=None, seed=0):
    """Bank over every syllable reading the codec can produce."""
    from braillespeech.braille_codec.cells import load_table
    from braillespeech.speech_dsp.oracle import unit_syllables

    table = table or load_table()
    sylls = []
    for unit in table.all_units(max_digits=1):
        sylls.extend(unit_syllables(unit))
    return build_bank(sylls, seed)


def stretch(mel, frames):
    """Linear time interpolation of ``[T, C]`` to ``frames`` rows (end points kept)."""
    mel = np.asarray(mel, dtype=np.float64)
    n = mel.shape[0]
    if n == frames:
        return mel
    if n == 1 or frames == 1:
        return np.repeat(mel[:1], frames, axis=0)
    pos = np.linspace(0.0, n - 1.0, frames)
    i0 = np.minimum(pos.astype(np.int64), n - 2)
    w = (pos - i0)[:, None]
    return mel[i0] * (1.0 - w) + mel[i0 + 1] * w


def classify_segment(segment, bank):
    segment = np.asarray(segment, dtype=np.float64)
    if segment.size == 0:
        raise EmptyInput("empty mel segment")
    if segment.mean() < bank.levels.min() - SILENCE_MARGIN:
        q = bank.quietest
        return Decoded(bank.names[q], 0.0, float("inf"))
    ceps = mel_cepstrum(segment)
    dists = np.empty(len(bank))
    for frames in np.unique(bank.lengths):
        seg = stretch(ceps, int(frames))
        for i in np.flatnonzero(bank.lengths == frames):
            diff = bank.cepstra[i] - seg
            dists[i] = MCD_CONST * np.mean(np.sqrt((diff * diff).sum(axis=1)))
    order = np.argsort(dists, kind="stable")
    best = int(order[0])
    second = dists[order[1]] if len(order) > 1 else np.inf
    conf = 1.0 if not np.isfinite(second) else float((second - dists[best]) / max(second, 1e-12))
    return Decoded(bank.names[best], max(conf, 1e-6), float(dists[best]))


def decode_mel(mel, bank, boundaries=None):
    """Decode ``[T, C]`` log-mel into syllables.

    ``boundaries`` lists the frame count of each syllable (e.g. from predicted
    durations); without it the whole mel is one syllable.
    """
    mel = np.asarray(mel)
    if mel.ndim != 2 or mel.shape[0] == 0:
        raise EmptyInput("decode_mel needs a nonempty [frames, channels] mel")
    counts = [mel.shape[0]] if boundaries is None else [int(c) for c in boundaries]
    out = []
    start = 0
    for c in counts:
        seg = mel[start:start + c]
        start += c
        if seg.shape[0] == 0:
            out.append(Decoded(bank.names[bank.quietest], 0.0, float("inf")))
        else:
            out.append(classify_segment(seg, bank))
    return out


def syllable_frames(phonemes, durations):
    """Group per-phoneme frame counts into per-syllable counts (a syllable ends at its final)."""
    from braillespeech.speech_dsp.oracle import INITIALS

    counts = []
    acc = 0
    for ph, d in zip(phonemes, durations):
        acc += int(d)
        if ph not in INITIALS:
            counts.append(acc)
            acc = 0
    if acc:
        counts.append(acc)
    return counts


def count_errors(reference, decoded):
    """Positional comparison -> ``(wrong, total)`` with low-confidence outputs counted wrong."""
    total = len(reference)
    wrong = 0
    for i, ref in enumerate(reference):
        if i >= len(decoded) or decoded[i].confidence <= 0.0 or decoded[i].syllable != ref:
            wrong += 1
    return wrong, total
