"""Overcrop detection from dot-column distances.

The leftmost dot column is the reference. A correctly cropped image of n cells
only produces distances from a fixed grid set (cell pitch multiples, with or
without the intra-cell column offset); any extra distance means a neighbouring
cell was cut into the crop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from braillespeech.braille_codec.render import RenderStyle, detect_dots
from braillespeech.errors import NoDotsDetected


@dataclass(frozen=True)
class DistanceProfile:
    reference_x: float
    distances: tuple  # distinct, strictly increasing, reference itself excluded


@dataclass(frozen=True)
class CleanVerdict:
    keep: bool
    profile: DistanceProfile
    unexpected: tuple = ()

    @property
    def verdict(self):
        return "keep" if self.keep else "drop"


def dot_columns(centers, style=RenderStyle()):
    """Group dot x-centres into columns within half a dot pitch."""
    xs = sorted(x for x, _ in centers)
    cols = []
    for x in xs:
        if cols and x - cols[-1][-1] <= style.col_pitch / 2:
            cols[-1].append(x)
        else:
            cols.append([x])
    return [float(np.mean(c)) for c in cols]


def _distinct(values, tol):
    out = []
    for v in sorted(values):
        if not out or v - out[-1] > tol:
            out.append(v)
    return out


def distance_profile(image, style=RenderStyle()):
    centers = detect_dots(image)
    if not centers:
        raise NoDotsDetected("image has no detectable dots")
    cols = dot_columns(centers, style)
    ref = cols[0]
    tol = 0.25 * style.col_pitch
    dists = _distinct([c - ref for c in cols[1:]], tol)
    return DistanceProfile(ref, tuple(dists))


def expected_distances(n_cells, style=RenderStyle(), reference_column=0):
    """Allowed distances when the reference dot sits in the given column (0 left, 1 right) of cell 0."""
    cp, col = style.cell_pitch, style.col_pitch
    out = set()
    for k in range(n_cells):
        for c in (0, 1):
            if k == 0 and c <= reference_column:
                continue
            out.add(k * cp + (c - reference_column) * col)
    return sorted(out)


def clean_overcrop(image, expected_cells, style=RenderStyle()):
    """Keep or drop an image by the extra-distance rule.

    The first cell may have no left-column dots, so both placements of the
    reference column are tried; the image is kept if either explains every
    observed distance.
    """
    profile = distance_profile(image, style)
    tol = 0.25 * style.col_pitch
    best = None
    for ref_col in (0, 1):
        grid = np.array(expected_distances(expected_cells, style, ref_col) or [np.inf])
        bad = tuple(d for d in profile.distances if np.min(np.abs(grid - d)) > tol)
        if not bad:
            return CleanVerdict(True, profile)
        if best is None or len(bad) < len(best):
            best = bad
    return CleanVerdict(False, profile, best)


def needs_review(image, expected_cells, style=RenderStyle()):
    """Flag possible incomplete crops: the dots stop short of the last expected cell."""
    profile = distance_profile(image, style)
    span = profile.distances[-1] if profile.distances else 0.0
    shortest_full = (expected_cells - 1) * style.cell_pitch - style.col_pitch
    return span < shortest_full - 0.25 * style.col_pitch
