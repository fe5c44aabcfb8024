"""Figure rendering for the CLI report paths.

Every figure lands next to its delimited counterpart (training curves by the
report TSV, heatmaps by the attention TSV, metric histograms by the eval
detail file). PNG output through the Agg backend with pinned metadata keeps
repeated runs byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PNG_META = {"Software": "qrewrite"}


def _save(fig, out_path: str) -> None:
    fig.savefig(out_path, dpi=110, format="png", metadata=_PNG_META)
    plt.close(fig)


def plot_training_curves(report, out_path: str) -> None:
    """One panel per logged metric, step on the x axis."""
    metrics: list[str] = []
    for _, metric, _ in report.rows:
        if metric not in metrics:
            metrics.append(metric)
    if not metrics:
        raise ValueError("empty training report")
    ncols = min(3, len(metrics))
    nrows = (len(metrics) + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(4.2 * ncols, 3.2 * nrows), squeeze=False)
    for slot, metric in enumerate(metrics):
        ax = axes[slot // ncols][slot % ncols]
        series = report.series(metric)
        ax.plot([s for s, _ in series], [v for _, v in series], marker="o", markersize=2.5)
        ax.set_title(metric)
        ax.set_xlabel("step")
        ax.grid(True, alpha=0.3)
    for slot in range(len(metrics), nrows * ncols):
        axes[slot // ncols][slot % ncols].axis("off")
    fig.tight_layout()
    _save(fig, out_path)


def plot_attention_grid(
    weights: np.ndarray,
    query_labels: list[str],
    key_labels: list[str],
    title: str,
    out_path: str,
) -> None:
    """Heat maps for one attention section, one panel per (layer, head)."""
    layers, heads = weights.shape[:2]
    fig, axes = plt.subplots(
        layers, heads, figsize=(2.6 * heads, 2.6 * layers), squeeze=False
    )
    for l in range(layers):
        for h in range(heads):
            ax = axes[l][h]
            ax.imshow(weights[l, h], cmap="viridis", vmin=0.0, vmax=1.0, aspect="auto")
            ax.set_title(f"layer {l} head {h}", fontsize=8)
            ax.set_xticks(range(len(key_labels)))
            ax.set_xticklabels(key_labels, rotation=90, fontsize=6)
            ax.set_yticks(range(len(query_labels)))
            ax.set_yticklabels(query_labels, fontsize=6)
    fig.suptitle(title)
    fig.tight_layout()
    _save(fig, out_path)


def plot_metric_histograms(details: list[dict], out_path: str) -> None:
    """Distribution of the per-pair lexical/semantic metrics."""
    keys = [k for k in ("f1", "edit_distance", "cosine") if any(k in d for d in details)]
    if not keys:
        raise ValueError("no metric columns in detail rows")
    fig, axes = plt.subplots(1, len(keys), figsize=(4.0 * len(keys), 3.2), squeeze=False)
    for slot, key in enumerate(keys):
        values = [d[key] for d in details if key in d]
        ax = axes[0][slot]
        ax.hist(values, bins=20, color="#4878a8")
        ax.set_title(key)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, out_path)
