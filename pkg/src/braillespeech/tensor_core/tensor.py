"""Dense tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure that pushes the output gradient back to them. ``backward`` walks the
graph in reverse topological order. Storage is float32 by default; the
``precision`` context manager switches newly created tensors to float64, which
is what the finite-difference checker uses.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np

from braillespeech.errors import NotScalarLoss, ShapeMismatch, UnknownOp

_DTYPE = [np.float32]
_node_ids = itertools.count()


def default_dtype():
    return _DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    """Create tensors in ``dtype`` inside the block (ops follow their inputs)."""
    _DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype or default_dtype())
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = next(_node_ids)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}, op={self.op}{label})"

    # arithmetic sugar keeps model code readable
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _result(data, parents, backward_fn, op):
    out = Tensor(data, dtype=data.dtype)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    out.op = op
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.data.dtype)
    if g.shape != t.data.shape:
        raise ShapeMismatch(f"gradient shape {g.shape} does not match tensor {t.data.shape}")
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, params=None):
    """Populate ``.grad`` for every tensor that ``loss`` depends on.

    When ``params`` is given, any parameter not reachable from the loss gets a
    zero gradient rather than ``None``.
    """
    if loss.data.size != 1:
        raise NotScalarLoss(f"loss must be a scalar, got shape {loss.shape}")
    order = _topo_order(loss)
    for node in order:
        if node is not loss and node._parents:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
    return loss


# ---------------------------------------------------------------- elementwise


def add(a, b):
    """Elementwise add. ``b`` may also be a bias matching the last axis of ``a``."""
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    if a.shape == b.shape:
        bias = False
    elif b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        bias = True
    else:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")

    def _bw(g):
        _accumulate(a, g)
        if bias:
            _accumulate(b, g.reshape(-1, g.shape[-1]).sum(axis=0, dtype=np.float64))
        else:
            _accumulate(b, g)

    return _result(a.data + b.data, (a, b), _bw, "add")


def sub(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    if a.shape != b.shape:
        raise ShapeMismatch(f"sub: {a.shape} vs {b.shape}")

    def _bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _result(a.data - b.data, (a, b), _bw, "sub")


def mul(a, b):
    """Elementwise product. ``b`` may also be a per-channel gain matching the last axis of ``a``."""
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    if a.shape == b.shape:
        gain = False
    elif b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        gain = True
    else:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")

    def _bw(g):
        _accumulate(a, g * b.data)
        if gain:
            _accumulate(b, (g * a.data).reshape(-1, g.shape[-1]).sum(axis=0, dtype=np.float64))
        else:
            _accumulate(b, g * a.data)

    return _result(a.data * b.data, (a, b), _bw, "mul")


def scale(x, s):
    """Multiply by a scalar, which may itself be a one-element tensor."""
    x = _as_tensor(x)
    if isinstance(s, Tensor):
        if s.data.size != 1:
            raise ShapeMismatch(f"scale factor must be a scalar, got {s.shape}")
        sv = s.data.reshape(())

        def _bw(g):
            _accumulate(x, g * sv)
            total = np.sum(g.astype(np.float64) * x.data)
            _accumulate(s, np.full(s.shape, total))

        return _result(x.data * sv, (x, s), _bw, "scale")

    sv = x.data.dtype.type(s)

    def _bw_const(g):
        _accumulate(x, g * sv)

    return _result(x.data * sv, (x,), _bw_const, "scale")


def exp(x):
    x = _as_tensor(x)
    out = np.exp(x.data)

    def _bw(g):
        _accumulate(x, g * out)

    return _result(out, (x,), _bw, "exp")


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0

    def _bw(g):
        _accumulate(x, g * mask)

    return _result(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), _bw, "relu")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Matrix product over the last two axes.

    ``b`` may be 2-D (shared weights) or have the same leading axes as ``a``.
    """
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"matmul batch axes differ: {a.shape} @ {b.shape}")

    def _bw(g):
        _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            a2 = a.data.reshape(-1, a.shape[-1])
            _accumulate(b, a2.T @ g.reshape(-1, g.shape[-1]))
        else:
            _accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return _result(a.data @ b.data, (a, b), _bw, "matmul")


def transpose(x, axes):
    x = _as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def _bw(g):
        _accumulate(x, np.transpose(g, inverse))

    return _result(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), _bw, "transpose")


def reshape(x, shape):
    x = _as_tensor(x)
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape {x.shape} -> {shape}") from exc

    def _bw(g):
        _accumulate(x, g.reshape(x.shape))

    return _result(out, (x,), _bw, "reshape")


def concat(xs, axis=0):
    xs = [_as_tensor(x) for x in xs]
    ref = xs[0].shape
    ax = axis % len(ref)
    for x in xs[1:]:
        if len(x.shape) != len(ref) or any(x.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeMismatch(f"concat: {ref} vs {x.shape} on axis {axis}")
    sizes = [x.shape[ax] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def _bw(g):
        for x, piece in zip(xs, np.split(g, splits, axis=ax)):
            _accumulate(x, piece)

    return _result(np.concatenate([x.data for x in xs], axis=ax), xs, _bw, "concat")


def slice_(x, index):
    """Basic (non-fancy) indexing, e.g. ``slice_(x, (slice(None), 0))``."""
    x = _as_tensor(x)
    out = x.data[index]

    def _bw(g):
        full = np.zeros_like(x.data)
        full[index] = g
        _accumulate(x, full)

    return _result(np.array(out), (x,), _bw, "slice")


def gather(x, indices, axis=1):
    """Pick rows along ``axis`` (0 or 1) with an integer index array.

    For ``axis=1`` ``x`` is ``[B, N, ...]`` and ``indices`` is ``[B, T]``; this
    is what the length regulator uses to repeat phoneme states over frames.
    """
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    if axis == 0:
        out = x.data[idx]

        def _bw(g):
            full = np.zeros_like(x.data)
            np.add.at(full, idx, g)
            _accumulate(x, full)

    elif axis == 1:
        if idx.ndim != 2 or idx.shape[0] != x.shape[0]:
            raise ShapeMismatch(f"gather: indices {idx.shape} for tensor {x.shape}")
        rows = np.arange(x.shape[0])[:, None]
        out = x.data[rows, idx]

        def _bw(g):
            full = np.zeros_like(x.data)
            np.add.at(full, (np.broadcast_to(rows, idx.shape), idx), g)
            _accumulate(x, full)

    else:
        raise ShapeMismatch("gather supports axis 0 or 1")
    return _result(np.ascontiguousarray(out), (x,), _bw, "gather")


def embedding_lookup(table, ids):
    return gather(table, ids, axis=0)


def masked_select(x, mask):
    """Flat tensor of the elements of ``x`` where ``mask`` is True."""
    x = _as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeMismatch(f"masked_select: mask {mask.shape} vs {x.shape}")

    def _bw(g):
        full = np.zeros_like(x.data)
        full[mask] = g
        _accumulate(x, full)

    return _result(x.data[mask], (x,), _bw, "masked_select")


# ---------------------------------------------------------------- reductions


def sum_(x):
    x = _as_tensor(x)

    def _bw(g):
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _result(np.asarray(x.data.sum(dtype=np.float64), dtype=x.data.dtype), (x,), _bw, "sum")


def mean(x):
    x = _as_tensor(x)
    n = x.data.size

    def _bw(g):
        _accumulate(x, np.broadcast_to(g / n, x.shape))

    return _result(np.asarray(x.data.mean(dtype=np.float64), dtype=x.data.dtype), (x,), _bw, "mean")


def mean_pool(x, mask=None):
    """Average ``[B, T, C]`` over T, counting only positions where ``mask`` is True."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeMismatch(f"mean_pool expects [B, T, C], got {x.shape}")
    if mask is None:
        mask = np.ones(x.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[:2]:
        raise ShapeMismatch(f"mean_pool mask {mask.shape} vs {x.shape[:2]}")
    counts = np.maximum(mask.sum(axis=1, keepdims=True), 1).astype(np.float64)
    w = (mask / counts)[:, :, None]
    out = (x.data.astype(np.float64) * w).sum(axis=1).astype(x.data.dtype)

    def _bw(g):
        _accumulate(x, g[:, None, :] * w)

    return _result(out, (x,), _bw, "mean_pool")


# ---------------------------------------------------------------- normalisation


def softmax(x, axis=-1):
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(x, out * (g - dot))

    return _result(out, (x,), _bw, "softmax")


def layer_norm(x, gain=None, bias=None, eps=1e-5):
    """Normalise over the last axis, then apply optional gain and bias."""
    x = _as_tensor(x)
    xd = x.data.astype(np.float64)
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]
    parents = [x]
    gv = bv = None
    if gain is not None:
        if gain.shape != (n,):
            raise ShapeMismatch(f"layer_norm gain {gain.shape} for width {n}")
        parents.append(gain)
        gv = gain.data.astype(np.float64)
    if bias is not None:
        if bias.shape != (n,):
            raise ShapeMismatch(f"layer_norm bias {bias.shape} for width {n}")
        parents.append(bias)
        bv = bias.data.astype(np.float64)
    out = xhat
    if gv is not None:
        out = out * gv
    if bv is not None:
        out = out + bv
    dt = x.data.dtype

    def _bw(g):
        g64 = g.astype(np.float64)
        if gain is not None:
            _accumulate(gain, (g64 * xhat).reshape(-1, n).sum(axis=0))
        if bias is not None:
            _accumulate(bias, g64.reshape(-1, n).sum(axis=0))
        gx = g64 * gv if gv is not None else g64
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        _accumulate(x, dx)

    return _result(out.astype(dt), parents, _bw, "layer_norm")


def l2_normalize(x, eps=1e-12):
    """Scale each row (last axis) to unit Euclidean norm."""
    x = _as_tensor(x)
    xd = x.data.astype(np.float64)
    norm = np.sqrt((xd * xd).sum(axis=-1, keepdims=True) + eps)
    y = xd / norm
    dt = x.data.dtype

    def _bw(g):
        g64 = g.astype(np.float64)
        _accumulate(x, (g64 - y * (g64 * y).sum(axis=-1, keepdims=True)) / norm)

    return _result(y.astype(dt), (x,), _bw, "l2_normalize")


# ---------------------------------------------------------------- convolution


def conv1d(x, weight, bias=None):
    """Stride-1, same-padded 1-D convolution on channels-last input.

    ``x`` is ``[B, T, Cin]``, ``weight`` is ``[K, Cin, Cout]`` with odd K.
    """
    x = _as_tensor(x)
    if x.ndim != 3 or weight.ndim != 3 or weight.shape[1] != x.shape[2]:
        raise ShapeMismatch(f"conv1d: input {x.shape}, weight {weight.shape}")
    k = weight.shape[0]
    if k % 2 != 1:
        raise ShapeMismatch("conv1d kernel width must be odd for same padding")
    pad = k // 2
    b, t, cin = x.shape
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    # [B, T, K, Cin] window view, flattened into one matmul
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # [B, T, Cin, K]
    cols = np.ascontiguousarray(np.swapaxes(win, 2, 3)).reshape(b * t, k * cin)
    w2 = weight.data.reshape(k * cin, -1)
    out = (cols @ w2).reshape(b, t, -1)
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data
        parents.append(bias)

    def _bw(g):
        g2 = g.reshape(b * t, -1)
        if weight.requires_grad:
            _accumulate(weight, (cols.T @ g2).reshape(weight.shape))
        if bias is not None:
            _accumulate(bias, g2.sum(axis=0, dtype=np.float64))
        if x.requires_grad:
            dcols = (g2 @ w2.T).reshape(b, t, k, cin)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, j:j + t, :] += dcols[:, :, j, :]
            _accumulate(x, dxp[:, pad:pad + t, :])

    return _result(out.astype(x.data.dtype), parents, _bw, "conv1d")


# ---------------------------------------------------------------- losses


def mse(pred, target):
    pred = _as_tensor(pred)
    target = _as_tensor(target, pred)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse: {pred.shape} vs {target.shape}")
    diff = pred.data.astype(np.float64) - target.data
    n = max(diff.size, 1)

    def _bw(g):
        gd = 2.0 * diff / n * g
        _accumulate(pred, gd)
        _accumulate(target, -gd)

    return _result(np.asarray((diff * diff).sum() / n, dtype=pred.data.dtype), (pred, target), _bw, "mse")


def mae(pred, target):
    pred = _as_tensor(pred)
    target = _as_tensor(target, pred)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mae: {pred.shape} vs {target.shape}")
    diff = pred.data.astype(np.float64) - target.data
    n = max(diff.size, 1)

    def _bw(g):
        gd = np.sign(diff) / n * g
        _accumulate(pred, gd)
        _accumulate(target, -gd)

    return _result(np.asarray(np.abs(diff).sum() / n, dtype=pred.data.dtype), (pred, target), _bw, "mae")


def cross_entropy(logits, targets):
    """Mean cross-entropy of ``[N, C]`` logits against integer class targets."""
    logits = _as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape}, targets {targets.shape}")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    rows = np.arange(n)
    loss = -logp[rows, targets].mean()

    def _bw(g):
        p = np.exp(logp)
        p[rows, targets] -= 1.0
        _accumulate(logits, p / n * g)

    return _result(np.asarray(loss, dtype=logits.data.dtype), (logits,), _bw, "cross_entropy")


OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "exp": exp,
    "relu": relu,
    "matmul": matmul,
    "transpose": transpose,
    "reshape": reshape,
    "concat": concat,
    "slice": slice_,
    "gather": gather,
    "embedding_lookup": embedding_lookup,
    "masked_select": masked_select,
    "sum": sum_,
    "mean": mean,
    "mean_pool": mean_pool,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "l2_normalize": l2_normalize,
    "conv1d": conv1d,
    "mse": mse,
    "mae": mae,
    "cross_entropy": cross_entropy,
}


def forward_op(kind, inputs, **attrs):
    """Dispatch an op by name, e.g. ``forward_op("matmul", [a, b])``."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise UnknownOp(kind) from None
    return fn(*inputs, **attrs)
