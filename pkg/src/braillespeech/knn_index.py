"""Text retrieval by the similarity value p, and hit-rate recall metrics."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass

import numpy as np

from braillespeech.braille_codec.cells import TextUnit
from braillespeech.errors import EmptyCandidates, KOutOfRange, MissingGroundTruth

DEFAULT_KS = (1, 5)
TSV_FIELDS = ("kind", "initial", "final", "tone", "digits", "punct")


def encoder_tag(model):
    """Short digest of the text-encoder weights, stored with every index."""
    h = hashlib.sha256()
    for name in sorted(model.store):
        if name.startswith("i2t.text."):
            h.update(name.encode())
            h.update(np.ascontiguousarray(model.store[name].data).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class TextIndex:
    units: tuple
    embeddings: np.ndarray  # [N, D], rows L2-normalised
    tag: str = ""

    def __len__(self):
        return len(self.units)

    def position(self, unit):
        return self.units.index(unit)

    def to_tsv(self):
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(TSV_FIELDS)
        for u in self.units:
            rec = u.to_record()
            w.writerow([rec[k] for k in TSV_FIELDS])
        return buf.getvalue()

    @staticmethod
    def units_from_tsv(text):
        rows = list(csv.reader(io.StringIO(text), delimiter="\t"))
        if not rows or tuple(rows[0]) != TSV_FIELDS:
            raise EmptyCandidates("candidate TSV is missing its header")
        return tuple(TextUnit.from_record(dict(zip(TSV_FIELDS, r))) for r in rows[1:])


def dedupe(units):
    seen = set()
    out = []
    for u in units:
        if u not in seen:
            seen.add(u)
            out.append(u)
    return out


def build_index(candidates, model, vocab=None):
    """Embed each distinct candidate once, keeping first-seen order."""
    from braillespeech.contrastive_i2t import embed_texts

    units = dedupe(candidates)
    if not units:
        raise EmptyCandidates("no candidate texts")
    emb = embed_texts(model, units, vocab)
    return from_embeddings(units, emb, encoder_tag(model))


def from_embeddings(units, embeddings, tag=""):
    emb = np.asarray(embeddings, dtype=np.float32)
    if len(units) == 0:
        raise EmptyCandidates("no candidate texts")
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.maximum(norms, 1e-12)
    emb.setflags(write=False)
    return TextIndex(tuple(units), emb, tag)


def scores(image_embeddings, index):
    q = np.atleast_2d(np.asarray(image_embeddings, dtype=np.float32))
    return q.astype(np.float64) @ index.embeddings.T.astype(np.float64)


def query(image_embedding, index, k=1):
    """Top-k ``(unit, p)`` by descending p; ties keep index insertion order."""
    if not 1 <= k <= len(index):
        raise KOutOfRange(f"k={k} outside 1..{len(index)}")
    p = scores(image_embedding, index)[0]
    order = np.argsort(-p, kind="stable")[:k]
    return [(index.units[i], float(p[i])) for i in order]


def rank_all(image_embeddings, index):
    """``[Q, N]`` candidate positions sorted by descending p, stable under ties."""
    return np.argsort(-scores(image_embeddings, index), axis=1, kind="stable")


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-k retrieval counts. A query is a true positive at k when its ground
    truth is among the top k candidates and a false negative otherwise."""

    k: int
    tp: int
    fn: int

    @property
    def recall(self):
        n = self.tp + self.fn
        return self.tp / n if n else 0.0


def confusion_at_k(rankings, truth, k):
    """``rankings``: per-query ranked unit lists; ``truth``: ground-truth units."""
    if len(rankings) != len(truth):
        raise MissingGroundTruth("every query needs a ground-truth text")
    tp = 0
    for ranked, gt in zip(rankings, truth):
        if gt is None:
            raise MissingGroundTruth("query without ground truth")
        if k < 1:
            raise KOutOfRange(f"k={k} must be positive")
        tp += gt in list(ranked)[:k]
    return ConfusionCounts(k, tp, len(truth) - tp)


def recall_metrics(rankings, truth, ks=DEFAULT_KS):
    """Hit-rate Recall@k for each k and their mean (MeanR)."""
    if not truth:
        raise MissingGroundTruth("empty query set")
    out = {f"recall@{k}": confusion_at_k(rankings, truth, k).recall for k in ks}
    out["mean_r"] = float(np.mean([out[f"recall@{k}"] for k in ks]))
    return out


def evaluate_retrieval(model, arrays, truth, candidates=None, ks=DEFAULT_KS, vocab=None):
    """Embed query images, rank against ``candidates`` (default: the distinct truths)."""
    from braillespeech.contrastive_i2t import embed_images

    index = build_index(candidates if candidates is not None else truth, model, vocab)
    ranks = rank_all(embed_images(model, arrays), index)
    depth = max(ks)
    rankings = [[index.units[j] for j in row[:depth]] for row in ranks]
    return recall_metrics(rankings, list(truth), ks)
