"""Scalar evaluation metrics: ACC, WER, MOS and corpus BLEU-4."""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from braillespeech.errors import EmptyCorpus, EmptyInput, NoRatings, ZeroLength


def acc(similarity=None, predicted=None, truth=None):
    """Fraction of correct matches.

    Given a square similarity matrix, sample i counts as correct when the
    argmax of row i is the diagonal. Alternatively pass ``predicted`` and
    ``truth`` label sequences.
    """
    if similarity is not None:
        m = np.asarray(similarity)
        if m.size == 0:
            raise EmptyInput("empty similarity matrix")
        return float(np.mean(np.argmax(m, axis=1) == np.arange(m.shape[0])))
    if predicted is None or truth is None or len(truth) == 0:
        raise EmptyInput("acc needs a similarity matrix or label pairs")
    return sum(p == t for p, t in zip(predicted, truth)) / len(truth)


def wer(counts):
    """Macro average of per-utterance ``wrong / total`` unit counts."""
    counts = list(counts)
    if not counts:
        raise ZeroLength("no utterances")
    total = 0.0
    for wrong, n in counts:
        if n <= 0:
            raise ZeroLength("utterance with zero units")
        if not 0 <= wrong <= n:
            raise ValueError(f"wrong count {wrong} outside [0, {n}]")
        total += wrong / n
    return total / len(counts)


def mos(tally):
    """Mean opinion score from the number of raters at each level 1..5."""
    h = np.asarray(tally, dtype=np.float64)
    if h.shape != (5,) or (h < 0).any():
        raise ValueError("tally needs five nonnegative counts")
    if h.sum() <= 0:
        raise NoRatings("no ratings")
    return float((np.arange(1, 6) * h).sum() / h.sum())


def tally_ratings(scores):
    """Count ratings per level from an iterable of integer scores 1..5."""
    h = [0] * 5
    for s in scores:
        s = int(s)
        if not 1 <= s <= 5:
            raise ValueError(f"rating {s} outside 1..5")
        h[s - 1] += 1
    return h


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(references, hypotheses):
    """Corpus BLEU with clipped n-gram precisions (n <= 4) and brevity penalty.

    A zero match count for n >= 2 is smoothed by adding one to both the
    match and total counts; a zero unigram match count gives 0.
    """
    if not references or len(references) != len(hypotheses):
        raise EmptyCorpus("need equally many, nonempty reference and hypothesis lists")
    matches = [0] * 4
    totals = [0] * 4
    ref_len = hyp_len = 0
    for ref, hyp in zip(references, hypotheses):
        ref_len += len(ref)
        hyp_len += len(hyp)
        for n in range(1, 5):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or matches[0] == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        if m == 0:
            m, t = 1, t + 1
        log_p += math.log(m / t)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p / 4)


def read_ratings(path):
    """Tally a ``rater_id,utterance_id,score`` CSV."""
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "score" not in reader.fieldnames:
            raise NoRatings(f"{path}: missing score column")
        tally = tally_ratings(row["score"] for row in reader)
    if sum(tally) == 0:
        raise NoRatings(f"{path}: no ratings")
    return tally
