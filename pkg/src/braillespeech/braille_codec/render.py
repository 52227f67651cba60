"""Parametric rendering of Braille cells to grayscale images, and PGM I/O."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from braillespeech.errors import BadHeader, IoFailure, NoDotsDetected, StyleInvalid


@dataclass(frozen=True)
class RenderStyle:
    # defaults give a 120x80 canvas for three cells
    dot_radius: float = 3.5
    col_pitch: float = 12.0
    row_pitch: float = 12.0
    cell_pitch: float = 30.0
    margin_x: float = 24.0
    margin_y: float = 28.0
    foreground: int = 30
    background: int = 230
    jitter: float = 0.0
    seed: int | None = None

    def validate(self):
        if self.dot_radius <= 0 or self.dot_radius >= min(self.col_pitch, self.row_pitch) / 2:
            raise StyleInvalid(f"dot radius {self.dot_radius} must be below half the dot pitch")
        if self.cell_pitch < 2 * self.col_pitch:
            raise StyleInvalid("cell pitch must leave a gap between cells")
        for level in (self.foreground, self.background):
            if not 0 <= level <= 255:
                raise StyleInvalid(f"gray level {level} outside 0..255")
        if self.foreground == self.background:
            raise StyleInvalid("foreground and background levels must differ")


@dataclass
class BrailleImage:
    width: int
    height: int
    pixels: np.ndarray  # uint8 [height, width]
    dot_centers: list = field(default_factory=list)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width):
            raise ValueError(f"pixel buffer {self.pixels.shape} for {self.width}x{self.height} image")


def canvas_size(n_cells, style=RenderStyle()):
    height = int(round(2 * style.margin_y + 2 * style.row_pitch))
    width = int(round(2 * style.margin_x + max(n_cells - 1, 0) * style.cell_pitch + style.col_pitch))
    return max(width, height), height


def dot_position(cell_index, dot, style=RenderStyle()):
    """Nominal (x, y) of dot number ``dot`` (1-6) in cell ``cell_index``."""
    col, row = divmod(dot - 1, 3)
    return (style.margin_x + cell_index * style.cell_pitch + col * style.col_pitch,
            style.margin_y + row * style.row_pitch)


def render_image(cells, style=RenderStyle(), width=None):
    """Draw anti-aliased filled circles at the raised dots of ``cells``."""
    style.validate()
    w, h = canvas_size(len(cells), style)
    if width is not None:
        w = max(w, width)
    rng = np.random.default_rng(style.seed) if style.jitter > 0 else None
    centers = []
    for k, cell in enumerate(cells):
        for dot in cell.raised:
            x, y = dot_position(k, dot, style)
            if rng is not None:
                dx, dy = rng.normal(0.0, style.jitter, size=2)
                x, y = x + float(dx), y + float(dy)
            centers.append((float(x), float(y)))
    coverage = np.zeros((h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    r = style.dot_radius
    for x, y in centers:
        x0, x1 = max(int(x - r - 2), 0), min(int(x + r + 3), w)
        y0, y1 = max(int(y - r - 2), 0), min(int(y + r + 3), h)
        dist = np.hypot(xx[y0:y1, x0:x1] - x, yy[y0:y1, x0:x1] - y)
        cov = np.clip(r + 0.5 - dist, 0.0, 1.0)
        np.maximum(coverage[y0:y1, x0:x1], cov, out=coverage[y0:y1, x0:x1])
    pix = style.background + (style.foreground - style.background) * coverage
    return BrailleImage(w, h, np.rint(pix).astype(np.uint8), centers)


def estimate_levels(image):
    """(background, foreground) gray levels: histogram mode and the farthest level from it."""
    hist = np.bincount(image.pixels.ravel(), minlength=256)
    bg = int(np.argmax(hist))
    lo, hi = int(image.pixels.min()), int(image.pixels.max())
    fg = lo if bg - lo >= hi - bg else hi
    return bg, fg


def detect_dots(image, min_contrast=20):
    """Centroids of dot blobs.

    Pixels are thresholded at the midpoint between background and foreground
    levels, then grouped into 4-connected components.
    """
    bg, fg = estimate_levels(image)
    if abs(fg - bg) < min_contrast:
        return []
    mid = (bg + fg) / 2.0
    ink = image.pixels < mid if fg < bg else image.pixels > mid
    labels, n = ndimage.label(ink)
    if n == 0:
        return []
    weights = np.abs(image.pixels.astype(np.float64) - bg)
    centers = ndimage.center_of_mass(weights, labels, range(1, n + 1))
    return sorted(((float(x), float(y)) for y, x in centers), key=lambda c: (round(c[0], 6), c[1]))


def detect_cells(image, n_cells, style=RenderStyle()):
    """Recover cell masks from a rendered image given its nominal grid."""
    from braillespeech.braille_codec.cells import BrailleCell

    centers = detect_dots(image)
    if not centers:
        raise NoDotsDetected("no dots found in image")
    masks = [0] * n_cells
    for x, y in centers:
        rel = x - style.margin_x
        k = int(round((rel - style.col_pitch / 2) / style.cell_pitch))
        col = int(round((rel - k * style.cell_pitch) / style.col_pitch))
        row = int(round((y - style.margin_y) / style.row_pitch))
        if not (0 <= k < n_cells and col in (0, 1) and row in (0, 1, 2)):
            raise NoDotsDetected(f"dot at ({x:.1f}, {y:.1f}) is off the cell grid")
        masks[k] |= 1 << (col * 3 + row)
    return [BrailleCell(m) for m in masks]


def pad_to(image, width, height=None):
    """Extend the canvas to the right/bottom with background pixels (or crop)."""
    height = height or image.height
    bg, _ = estimate_levels(image)
    out = np.full((height, width), bg, dtype=np.uint8)
    h, w = min(height, image.height), min(width, image.width)
    out[:h, :w] = image.pixels[:h, :w]
    centers = [(x, y) for x, y in image.dot_centers if x < width and y < height]
    return BrailleImage(width, height, out, centers)


def with_style(style, **changes):
    return replace(style, **changes)


def write_pgm(path, image):
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(image.pixels, dtype=np.uint8).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_pgm(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read image {path}: {exc}") from exc
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise BadHeader(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise BadHeader(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise BadHeader(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise BadHeader(f"{path}: only 8-bit PGM is supported")
    body = raw[pos + 1:]
    if len(body) < w * h:
        raise BadHeader(f"{path}: expected {w * h} pixel bytes, found {len(body)}")
    pixels = np.frombuffer(body[:w * h], dtype=np.uint8).reshape(h, w).copy()
    return BrailleImage(w, h, pixels)
