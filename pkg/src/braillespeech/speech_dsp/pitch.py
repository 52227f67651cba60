"""Mexican-hat continuous wavelet decomposition of F0 contours.

Scales are dyadic, ``s_j = s0 * 2**j`` frames. The contour is extended at both
ends by repeating its edge values, and each discrete kernel is made exactly
zero-mean so a constant contour maps to zero coefficients. The inverse is the
single-sum delta-function reconstruction for dyadic scale spacing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from braillespeech.errors import AllUnvoiced, EmptyInput, NonFiniteInput

N_SCALES = 10
BASE_SCALE = 0.5
# reconstruction constants of the Mexican hat (second derivative of a Gaussian)
C_DELTA = 3.541
PSI0_AT_ZERO = 0.867325


def mexican_hat(t):
    t = np.asarray(t, dtype=np.float64)
    return (2.0 / (math.sqrt(3.0) * math.pi ** 0.25)) * (1.0 - t * t) * np.exp(-0.5 * t * t)


def scales(n_scales=N_SCALES, s0=BASE_SCALE):
    return s0 * 2.0 ** np.arange(n_scales)


def _kernel(s, limit):
    half = min(int(math.ceil(5 * s)), limit)
    k = mexican_hat(np.arange(-half, half + 1) / s) / math.sqrt(s)
    return k - k.mean()


@dataclass
class PitchSpectrogram:
    coeffs: np.ndarray  # [scales, frames]
    scales: np.ndarray
    mean: float = 0.0
    std: float = 1.0

    @property
    def n_frames(self):
        return self.coeffs.shape[1]


def interpolate_unvoiced(f0):
    """Linear interpolation over frames with F0 <= 0; edges hold the nearest voiced value."""
    f0 = np.asarray(f0, dtype=np.float64)
    if f0.size == 0:
        raise EmptyInput("empty F0 contour")
    if not np.all(np.isfinite(f0)):
        raise NonFiniteInput("F0 contour contains non-finite values")
    voiced = f0 > 0
    if not voiced.any():
        raise AllUnvoiced("contour has no voiced frame")
    idx = np.arange(f0.size)
    return np.interp(idx, idx[voiced], f0[voiced])


def normalize_contour(f0, mean=None, std=None):
    """Interpolate gaps, then mean-variance normalise; returns ``(z, mean, std)``."""
    f = interpolate_unvoiced(f0)
    mean = float(f.mean()) if mean is None else float(mean)
    if std is None:
        std = float(f.std())
    std = std if std > 1e-8 else 1.0
    return (f - mean) / std, mean, std


def cwt(x, n_scales=N_SCALES, s0=BASE_SCALE):
    """Raw CWT coefficients ``[n_scales, len(x)]`` of a 1-D signal."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise EmptyInput("cwt needs a nonempty 1-D signal")
    sc = scales(n_scales, s0)
    pad = int(math.ceil(5 * sc[-1]))
    xp = np.pad(x, pad, mode="edge")
    out = np.empty((n_scales, x.size))
    for j, s in enumerate(sc):
        out[j] = np.convolve(xp, _kernel(s, pad), mode="same")[pad:pad + x.size]
    return out


def cwt_pitch(f0, n_scales=N_SCALES, s0=BASE_SCALE, mean=None, std=None):
    """Decompose an F0 contour in Hz (0 marks unvoiced frames)."""
    z, mean, std = normalize_contour(f0, mean, std)
    return PitchSpectrogram(cwt(z, n_scales, s0), scales(n_scales, s0), mean, std)


def inverse_cwt_normalized(coeffs, sc):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    return (coeffs / np.sqrt(sc)[:, None]).sum(axis=0) / (C_DELTA * PSI0_AT_ZERO)


def inverse_cwt(spec):
    """Reconstruct the F0 contour in Hz (unvoiced gaps come back interpolated)."""
    return inverse_cwt_normalized(spec.coeffs, spec.scales) * spec.std + spec.mean
