"""Small layer library on top of the autodiff ops.

Layers register their parameters by dotted name in a shared ``ParamStore`` so
a whole model serialises as one flat name -> tensor table.
"""

from __future__ import annotations

import numpy as np

from braillespeech.errors import ShapeMismatch
from braillespeech.tensor_core import tensor as T
from braillespeech.tensor_core.optim import ones, uniform_init, zeros

NEG_INF = -1e9


class ParamStore(dict):
    def add(self, name, tensor):
        if name in self:
            raise KeyError(f"duplicate parameter {name}")
        tensor.name = name
        self[name] = tensor
        return tensor


class Linear:
    def __init__(self, store, name, fan_in, fan_out, rng, bias=True):
        self.w = store.add(f"{name}.weight", uniform_init(rng, (fan_in, fan_out), fan_in))
        self.b = store.add(f"{name}.bias", zeros((fan_out,))) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.w)
        return T.add(y, self.b) if self.b is not None else y


class LayerNorm:
    def __init__(self, store, name, dim):
        self.g = store.add(f"{name}.gain", ones((dim,)))
        self.b = store.add(f"{name}.bias", zeros((dim,)))

    def __call__(self, x):
        return T.layer_norm(x, self.g, self.b)


class Conv1d:
    def __init__(self, store, name, cin, cout, kernel, rng):
        self.w = store.add(f"{name}.weight", uniform_init(rng, (kernel, cin, cout), kernel * cin))
        self.b = store.add(f"{name}.bias", zeros((cout,)))

    def __call__(self, x):
        return T.conv1d(x, self.w, self.b)


def attention_bias(key_mask, heads):
    """Additive ``[B, H, T, T]`` bias that hides padded keys."""
    key_mask = np.asarray(key_mask, dtype=bool)
    b, t = key_mask.shape
    bias = np.where(key_mask, 0.0, NEG_INF)[:, None, None, :]
    return np.ascontiguousarray(np.broadcast_to(bias, (b, heads, t, t)))


class MultiHeadAttention:
    def __init__(self, store, name, dim, heads, rng):
        if dim % heads:
            raise ShapeMismatch(f"embed dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.dh = dim // heads
        self.qkv = Linear(store, f"{name}.qkv", dim, 3 * dim, rng)
        self.out = Linear(store, f"{name}.out", dim, dim, rng)

    def __call__(self, x, bias=None):
        b, t, d = x.shape
        h, dh = self.heads, self.dh
        qkv = T.reshape(self.qkv(x), (b, t, 3, h, dh))
        qkv = T.transpose(qkv, (2, 0, 3, 1, 4))  # [3, B, H, T, dh]
        q = T.slice_(qkv, 0)
        k = T.slice_(qkv, 1)
        v = T.slice_(qkv, 2)
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        if bias is not None:
            scores = T.add(scores, T.Tensor(bias, dtype=scores.data.dtype))
        attn = T.softmax(scores, axis=-1)
        ctx = T.matmul(attn, v)  # [B, H, T, dh]
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
        return self.out(ctx)


class TransformerBlock:
    """Pre-norm self-attention block with a ReLU feed-forward layer.

    Each residual branch is multiplied by a learnable per-channel gain that
    starts at ``branch_gain``, so a fresh block is close to the identity.
    """

    def __init__(self, store, name, dim, heads, rng, ff_mult=2, branch_gain=0.1):
        self.ln1 = LayerNorm(store, f"{name}.ln1", dim)
        self.attn = MultiHeadAttention(store, f"{name}.attn", dim, heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim)
        self.ff1 = Linear(store, f"{name}.ff1", dim, ff_mult * dim, rng)
        self.ff2 = Linear(store, f"{name}.ff2", ff_mult * dim, dim, rng)
        self.gain1 = store.add(f"{name}.gain1", T.Tensor(np.full((dim,), branch_gain), requires_grad=True))
        self.gain2 = store.add(f"{name}.gain2", T.Tensor(np.full((dim,), branch_gain), requires_grad=True))

    def __call__(self, x, bias=None):
        x = T.add(x, T.mul(self.attn(self.ln1(x), bias), self.gain1))
        return T.add(x, T.mul(self.ff2(T.relu(self.ff1(self.ln2(x)))), self.gain2))


def sinusoid_table(length, dim):
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
