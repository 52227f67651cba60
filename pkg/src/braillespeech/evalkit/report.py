"""Metric tables and figures for a run directory.

Everything written here is byte-stable for fixed inputs: floats use six
significant digits, the timestamp comes from ``SOURCE_DATE_EPOCH`` (0 when
unset) and the SVG writer gets a fixed hash salt and no date.
"""

from __future__ import annotations

import csv
import datetime
import os
from pathlib import Path

import numpy as np

from braillespeech.errors import MissingArtifacts, NonFiniteInput

CSV_FIELDS = ("metric", "value", "dataset", "run", "timestamp")
UNAVAILABLE = ("FAD", "METEOR", "CLIP-Score")
CURVE_FILES = ("i2t_curve.csv", "t2a_curve.csv", "finetune_curve.csv")


def fmt(value):
    return f"{float(value):.6g}"


def timestamp():
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return datetime.datetime.fromtimestamp(epoch, datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "braillespeech"
    matplotlib.rcParams["svg.fonttype"] = "path"
    return plt


def save_svg(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def range_average(matrix):
    """Mean over columns of (max - min) within each column."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise MissingArtifacts("similarity matrix must be a nonempty 2-D array")
    return float(np.mean(m.max(axis=0) - m.min(axis=0)))


def metric_rows(metrics, dataset, run):
    """Rows for the metric table; the unavailable metrics get ``n/a``."""
    ts = timestamp()
    rows = []
    for name in metrics:
        v = float(metrics[name])
        if not np.isfinite(v):
            raise NonFiniteInput(f"metric {name} is not finite")
        rows.append((name, fmt(v), dataset, run, ts))
    for name in UNAVAILABLE:
        if name not in metrics:
            rows.append((name, "n/a", dataset, run, ts))
    return rows


def write_metric_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        w.writerows(rows)


def read_curve(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise MissingArtifacts(f"{path}: empty curve")
    cols = {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}
    return cols


def plot_curve(path, curve, title):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    x = curve["epoch"]
    for name, y in curve.items():
        if name != "epoch":
            ax.plot(x, y, label=name, lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    save_svg(fig, path)
    plt.close(fig)


def plot_heatmap(path, matrix, title):
    """Cosine-similarity heatmap; returns the number of cells drawn."""
    plt = _pyplot()
    m = np.asarray(matrix, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(4, 3.6))
    mesh = ax.pcolormesh(m, cmap="viridis", vmin=-1.0, vmax=1.0)
    ax.invert_yaxis()
    ax.set_xlabel("text")
    ax.set_ylabel("image")
    ax.set_title(f"{title} (range avg {fmt(range_average(m))})", fontsize=9)
    fig.colorbar(mesh, ax=ax)
    fig.tight_layout()
    save_svg(fig, path)
    plt.close(fig)
    return int(mesh.get_array().size)


def plot_sweep(path, lambdas, columns):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for name, ys in columns.items():
        ax.plot(lambdas, ys, marker="o", label=name)
    ax.set_xlabel("lambda1")
    ax.legend(frameon=False)
    fig.tight_layout()
    save_svg(fig, path)
    plt.close(fig)


def emit_report(run_dir, report_dir, metrics, similarities=None, dataset="desk", run=None):
    """Write ``metrics.csv``, one SVG per loss curve and one heatmap per category.

    ``similarities`` maps a data category to its image-by-text cosine matrix.
    The range averages are added to the metric table as ``range_avg_<category>``.
    """
    run_dir, report_dir = Path(run_dir), Path(report_dir)
    curves = [run_dir / f for f in CURVE_FILES if (run_dir / f).exists()]
    if not run_dir.is_dir() or not curves:
        raise MissingArtifacts(f"{run_dir}: no training curves to report")
    report_dir.mkdir(parents=True, exist_ok=True)
    run = run or run_dir.name
    metrics = dict(metrics)
    written = []
    for path in curves:
        out = report_dir / (path.stem + ".svg")
        plot_curve(out, read_curve(path), path.stem.replace("_", " "))
        written.append(out)
    for cat, mat in sorted((similarities or {}).items()):
        metrics[f"range_avg_{cat}"] = range_average(mat)
        out = report_dir / f"similarity_{cat}.svg"
        plot_heatmap(out, mat, cat)
        written.append(out)
    table = report_dir / "metrics.csv"
    write_metric_csv(table, metric_rows(metrics, dataset, run))
    return [table] + written
