"""Synthetic BIT-style dataset: generation, manifest I/O, cleaning and augmentation passes."""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from braillespeech.braille_codec.cells import Kind, TextUnit, load_table, pinyin_to_cells
from braillespeech.braille_codec.cleaning import clean_overcrop, needs_review
from braillespeech.braille_codec.render import (
    BrailleImage,
    RenderStyle,
    estimate_levels,
    read_pgm,
    render_image,
    write_pgm,
)
from braillespeech.errors import IoFailure

CATEGORIES = (Kind.NUMBER, Kind.SPELL, Kind.PUNCT)
MANIFEST_KEYS = ("id", "image", "kind", "initial", "final", "tone", "digits", "punct", "split")


@dataclass(frozen=True)
class Record:
    id: str
    image: str  # relative to the manifest directory
    text: TextUnit
    split: str = "train"

    @property
    def category(self):
        return self.text.kind

    def to_json(self):
        row = {"id": self.id, "image": self.image}
        row.update(self.text.to_record())
        row["split"] = self.split
        return json.dumps({k: row[k] for k in MANIFEST_KEYS}, ensure_ascii=False)


@dataclass
class Manifest:
    records: list = field(default_factory=list)
    root: str = "."

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(ids) != len(set(ids)):
            raise ValueError("manifest ids must be unique")

    def __len__(self):
        return len(self.records)

    @property
    def counts(self):
        c = Counter(r.category for r in self.records)
        return {k.value: c.get(k, 0) for k in CATEGORIES}

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def image_path(self, rec):
        return os.path.join(self.root, rec.image)

    def load_image(self, rec):
        return read_pgm(self.image_path(rec))

    def write(self, path):
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                for r in self.records:
                    fh.write(r.to_json() + "\n")
        except OSError as exc:
            raise IoFailure(f"cannot write manifest {path}: {exc}") from exc

    @classmethod
    def read(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                rows = [json.loads(line) for line in fh if line.strip()]
        except OSError as exc:
            raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise IoFailure(f"malformed manifest {path}: {exc}") from exc
        records = [Record(r["id"], r["image"], TextUnit.from_record(r), r.get("split", "train")) for r in rows]
        return cls(records, os.path.dirname(os.path.abspath(path)))


def sample_unit(kind, rng, table, max_digits=2):
    """Uniform draw of one text unit of a category from the table."""
    if kind is Kind.SPELL:
        keys = list(table.syllables)
        ini, fin = keys[rng.integers(len(keys))]
        tones = sorted(table.tones)
        return TextUnit.spell(ini, fin, tones[rng.integers(len(tones))])
    if kind is Kind.NUMBER:
        n = int(rng.integers(1, max_digits + 1))
        digits = sorted(table.digits)
        return TextUnit.number("".join(digits[rng.integers(len(digits))] for _ in range(n)))
    puncts = list(table.puncts)
    return TextUnit.punctuation(puncts[rng.integers(len(puncts))])


def overcrop_cells(cells, rng, table):
    """Append a neighbouring cell, as an overcropped screenshot would."""
    pool = [table.digits[d] for d in sorted(table.digits)] + list(table.finals.values())
    return list(cells) + [pool[rng.integers(len(pool))]]


def generate_dataset(out_dir, counts, seed, style=RenderStyle(jitter=0.4), test_fraction=0.2,
                     max_digits=2, overcrop_rate=0.0, table=None, units=None):
    """Render a labelled image set and write ``manifest.jsonl`` into ``out_dir``.

    ``counts`` maps category (``Kind`` or its name) to a number of records.
    ``units`` optionally restricts sampling to a fixed list of text units.
    With ``overcrop_rate`` > 0 that fraction of images gets an extra cell
    appended while keeping the original label (dirty data for ``clean``).
    """
    table = table or load_table()
    counts = {Kind(k): int(v) for k, v in counts.items()}
    if any(v < 0 for v in counts.values()):
        raise ValueError("counts must be nonnegative")
    img_dir = os.path.join(out_dir, "images")
    try:
        os.makedirs(img_dir, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {img_dir}: {exc}") from exc
    rng = np.random.default_rng(seed)
    pools = None
    if units is not None:
        pools = {k: [u for u in units if u.kind is k] for k in CATEGORIES}
    records = []
    for kind in CATEGORIES:
        for i in range(counts.get(kind, 0)):
            if pools is not None:
                unit = pools[kind][rng.integers(len(pools[kind]))]
            else:
                unit = sample_unit(kind, rng, table, max_digits)
            cells = pinyin_to_cells(unit, table)
            if overcrop_rate > 0 and rng.random() < overcrop_rate:
                cells = overcrop_cells(cells, rng, table)
            img_seed = int(rng.integers(2 ** 31))
            split = "test" if rng.random() < test_fraction else "train"
            image = render_image(cells, replace(style, seed=img_seed))
            rid = f"{kind.value[0].lower()}{i:05d}"
            rel = f"images/{rid}.pgm"
            write_pgm(os.path.join(out_dir, rel), image)
            records.append(Record(rid, rel, unit, split))
    manifest = Manifest(records, out_dir)
    manifest.write(os.path.join(out_dir, "manifest.jsonl"))
    return manifest


def expected_cell_count(unit, table=None):
    return len(pinyin_to_cells(unit, table))


def clean_manifest(manifest, expected_cells="AUTO", style=RenderStyle()):
    """Split a manifest into kept records, dropped records and records flagged for review."""
    kept, dropped, review = [], [], []
    for rec in manifest.records:
        n = expected_cell_count(rec.text) if str(expected_cells).upper() == "AUTO" else int(expected_cells)
        image = manifest.load_image(rec)
        verdict = clean_overcrop(image, n, style)
        if verdict.keep:
            kept.append(rec)
            if needs_review(image, n, style):
                review.append(rec)
        else:
            dropped.append(rec)
    return Manifest(kept, manifest.root), dropped, review


def flip180(image):
    w, h = image.width, image.height
    centers = [(w - 1 - x, h - 1 - y) for x, y in image.dot_centers]
    return BrailleImage(w, h, image.pixels[::-1, ::-1].copy(), centers)


def background_color(image, level):
    """Replace the background gray level, keeping the foreground level fixed."""
    bg, fg = estimate_levels(image)
    pix = image.pixels.astype(np.float64)
    if fg == bg:
        out = np.full_like(pix, level)
    else:
        cov = np.clip((pix - bg) / (fg - bg), 0.0, 1.0)
        out = level + (fg - level) * cov
    return BrailleImage(image.width, image.height, np.rint(out).astype(np.uint8), list(image.dot_centers))


def parse_method(spec):
    spec = spec.strip()
    if spec == "flip180":
        return ("flip180", None)
    if spec.startswith("bg:"):
        level = int(spec[3:])
        if not 0 <= level <= 255:
            raise ValueError(f"background level {level} outside 0..255")
        return ("bg", level)
    raise ValueError(f"unknown augmentation method {spec!r}")


def augment(image, method):
    name, arg = parse_method(method) if isinstance(method, str) else method
    return flip180(image) if name == "flip180" else background_color(image, arg)


def augment_manifest(manifest, methods, out_dir=None, suffix="a"):
    """Add one augmented copy of every record, cycling through ``methods``.

    Labels are carried over unchanged. Returns the combined manifest.
    """
    methods = [parse_method(m) if isinstance(m, str) else m for m in methods]
    if not methods:
        raise ValueError("at least one augmentation method is required")
    out_dir = out_dir or manifest.root
    os.makedirs(os.path.join(out_dir, "images_aug"), exist_ok=True)
    extra = []
    for i, rec in enumerate(manifest.records):
        image = augment(manifest.load_image(rec), methods[i % len(methods)])
        rid = f"{rec.id}{suffix}"
        rel = f"images_aug/{rid}.pgm"
        write_pgm(os.path.join(out_dir, rel), image)
        extra.append(Record(rid, rel, rec.text, rec.split))
    if os.path.abspath(out_dir) != os.path.abspath(manifest.root):
        base = [replace(r, image=os.path.relpath(manifest.image_path(r), out_dir)) for r in manifest.records]
    else:
        base = list(manifest.records)
    return Manifest(base + extra, out_dir)
