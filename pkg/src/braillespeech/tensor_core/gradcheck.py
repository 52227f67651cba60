"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from braillespeech.errors import NonFiniteValue
from braillespeech.tensor_core.tensor import backward, precision


@dataclass
class GradCheckResult:
    max_relative_error: float
    checked: int
    excluded: list = field(default_factory=list)  # (param index, flat index) at kinks

    def __float__(self):
        return self.max_relative_error


def _eval(fn):
    loss = fn()
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteValue(f"loss is {value}")
    return loss, value


def _slope(f, f0, eps, levels=3):
    """Central difference at ``eps``, refined when a kink lies inside the stencil.

    The second difference of a smooth function shrinks tenfold per tenfold
    smaller step. If it does not shrink at all the probe sits on a kink and
    ``None`` is returned; otherwise the step keeps shrinking until the
    second difference scales like a smooth function's, so a coarse stencil
    that straddled a nearby kink is replaced by a finer estimate.
    """
    h = eps
    fp, fm = f(h), f(-h)
    numeric = (fp - fm) / (2 * h)
    gap = abs((fp - f0) - (f0 - fm)) / h
    for _ in range(levels):
        if gap <= 1e-6:
            break
        h /= 10
        fp, fm = f(h), f(-h)
        fine = abs((fp - f0) - (f0 - fm)) / h
        numeric = (fp - fm) / (2 * h)
        ratio = fine / gap
        if ratio > 0.5:
            return None
        gap = fine
        if 0.05 <= ratio <= 0.2:
            break
    return numeric


def grad_check(fn, params, eps=1e-3, max_coords=64, seed=0):
    """Compare backprop gradients of ``fn()`` against central differences.

    ``fn`` takes no arguments and rebuilds the scalar loss from ``params``. The
    whole check runs on a float64 shadow of the parameters; originals are
    restored afterwards. Coordinates where the one-sided slopes disagree and do
    not converge as the step shrinks are treated as kinks and reported in
    ``excluded`` instead of being scored; a kink merely near the probe is
    handled by shrinking the step.
    """
    rng = np.random.default_rng(seed)
    saved = [p.data for p in params]
    try:
        with precision(np.float64):
            for p in params:
                p.data = p.data.astype(np.float64)
                p.grad = None
            loss, f0 = _eval(fn)
            backward(loss, params)
            analytic = [p.grad.copy() for p in params]

            coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
            if len(coords) > max_coords:
                pick = rng.choice(len(coords), size=max_coords, replace=False)
                coords = [coords[k] for k in sorted(pick)]

            def f_at(i, j, delta):
                flat = params[i].data.reshape(-1)
                old = flat[j]
                flat[j] = old + delta
                try:
                    return _eval(fn)[1]
                finally:
                    flat[j] = old

            worst = 0.0
            excluded = []
            for i, j in coords:
                numeric = _slope(lambda d: f_at(i, j, d), f0, eps)
                if numeric is None:
                    excluded.append((i, j))
                    continue
                a = float(analytic[i].reshape(-1)[j])
                err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
                worst = max(worst, err)
    finally:
        for p, d in zip(params, saved):
            p.data = d
            p.grad = None
    return GradCheckResult(worst, len(coords) - len(excluded), excluded)
