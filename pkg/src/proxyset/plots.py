"""Figure rendering for sweep tables.

Renders the standard report figures (metric vs proxy count, metric vs
subsample size, tolerance/coverage sensitivity) as PNG files next to the
delimited output.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiment import FULL_SET

_METRIC_LABELS = {
    "test_fidelity": "test fidelity",
    "train_fidelity": "train fidelity",
    "coverage": "coverage",
    "instability": "instability",
}


def _mean_by(rows, key_fn, value_key):
    groups = defaultdict(list)
    for row in rows:
        v = row.get(value_key)
        if v is None:
            continue
        groups[key_fn(row)].append(float(v))
    return {k: float(np.mean(vs)) for k, vs in groups.items()}


def _plot_metric_vs_axis(rows, metric: str, xlabel: str, path: Path):
    methods = sorted({r["method"] for r in rows if r["method"] != FULL_SET})
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for method in methods:
        sub = [r for r in rows if r["method"] == method]
        means = _mean_by(sub, lambda r: float(r["axis_value"]), metric)
        if not means:
            continue
        xs = sorted(means)
        ax.plot(xs, [means[x] for x in xs], marker="o", markersize=3, label=method)
    full = _mean_by([r for r in rows if r["method"] == FULL_SET], lambda r: 0, metric)
    if full:
        ax.axhline(full[0], color="black", linestyle="--", linewidth=1.2, label=FULL_SET)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(_METRIC_LABELS.get(metric, metric))
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _plot_sensitivity(rows, path: Path):
    methods = sorted({r["method"] for r in rows if r["method"] != FULL_SET})
    focus = ["const-min-loss"] if "const-min-loss" in methods else methods
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for method in focus:
        sub = [r for r in rows if r["method"] == method]
        coverages = sorted({float(r["min_coverage"]) for r in sub})
        for c in coverages:
            cl = [r for r in sub if float(r["min_coverage"]) == c]
            means = _mean_by(cl, lambda r: float(r["epsilon_percentile"]), "test_fidelity")
            xs = sorted(means)
            ax.plot(xs, [means[x] for x in xs], marker="o", markersize=3, label=f"{method}, c={c:g}")
    full = _mean_by([r for r in rows if r["method"] == FULL_SET], lambda r: 0, "test_fidelity")
    if full:
        ax.axhline(full[0], color="black", linestyle="--", linewidth=1.2, label=FULL_SET)
    ax.set_xlabel("tolerance percentile")
    ax.set_ylabel("test fidelity")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_sweep_figures(rows: list[dict], out_dir) -> list[Path]:
    """Render the figures matching the sweep's axis; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not rows:
        return []
    axis = rows[0]["axis"]
    written: list[Path] = []
    if axis == "k":
        for metric in ("test_fidelity", "coverage", "instability"):
            path = out_dir / f"{metric}_vs_k.png"
            _plot_metric_vs_axis(rows, metric, "proxy set size k", path)
            written.append(path)
    elif axis == "subsample":
        path = out_dir / "test_fidelity_vs_subsample.png"
        _plot_metric_vs_axis(rows, "test_fidelity", "explanation subsample size", path)
        written.append(path)
    else:
        path = out_dir / "sensitivity.png"
        _plot_sensitivity(rows, path)
        written.append(path)
    return written
