"""Token ids for the text encoder."""

from __future__ import annotations

import numpy as np

from braillespeech.braille_codec.cells import Kind, load_table
from braillespeech.errors import UnknownToken

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
CONTEXT_LENGTH = 52


class Vocabulary:
    def __init__(self, table=None):
        table = table or load_table()
        tokens = [PAD, BOS, EOS]
        tokens += [f"i:{s}" for s in table.initials]
        tokens += [f"f:{s}" for s in table.finals]
        tokens += [f"t:{t}" for t in sorted(table.tones)]
        tokens += [f"d:{d}" for d in sorted(table.digits)]
        tokens += [f"p:{p}" for p in table.puncts]
        self.tokens = tokens
        self.ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def id(self, token):
        try:
            return self.ids[token]
        except KeyError:
            raise UnknownToken(token) from None

    def token(self, idx):
        if not 0 <= idx < len(self.tokens):
            raise UnknownToken(f"id {idx}")
        return self.tokens[idx]

    @property
    def pad_id(self):
        return self.ids[PAD]


def unit_tokens(unit):
    if unit.kind is Kind.SPELL:
        head = [f"i:{unit.initial}"] if unit.initial else []
        return head + [f"f:{unit.final}", f"t:{unit.tone}"]
    if unit.kind is Kind.NUMBER:
        return [f"d:{d}" for d in unit.digits]
    return [f"p:{unit.punct}"]


def tokenize_text(unit, vocab=None, context_length=CONTEXT_LENGTH):
    """``[BOS, ..., EOS, PAD...]`` ids, padded or truncated to ``context_length``."""
    vocab = vocab or Vocabulary()
    ids = [vocab.id(BOS)] + [vocab.id(t) for t in unit_tokens(unit)] + [vocab.id(EOS)]
    ids = ids[:context_length]
    return ids + [vocab.pad_id] * (context_length - len(ids))


def tokenize_batch(units, vocab=None, context_length=CONTEXT_LENGTH):
    vocab = vocab or Vocabulary()
    return np.array([tokenize_text(u, vocab, context_length) for u in units], dtype=np.int64)
