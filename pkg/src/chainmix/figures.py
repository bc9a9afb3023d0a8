"""Figure rendering for reports: start-probability bars, transition heatmaps,
and popularity bars, written straight to image files (Agg backend, no display).

PNG metadata is stripped so reruns with the same inputs produce identical
bytes under one matplotlib version.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import ClusterReport

_RC = {
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "font.size": 8,
    "axes.titlesize": 9,
    "axes.labelsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "figure.constrained_layout.use": True,
}

_SAVE_KWARGS = {"metadata": {"Software": None}}


def _grid(n_panels: int) -> tuple[int, int]:
    ncols = min(n_panels, 2)
    return math.ceil(n_panels / ncols), ncols


def save_start_probability_figure(report: ClusterReport, path) -> None:
    """One bar panel per cluster showing where its weekly sequences begin."""
    names = report.categories.names
    nrows, ncols = _grid(report.n_clusters)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(nrows, ncols, figsize=(4.0 * ncols, 2.6 * nrows), squeeze=False)
        for slot, summary in enumerate(report.clusters):
            ax = axes[slot // ncols][slot % ncols]
            ax.bar(np.arange(len(names)), summary.start_probs, color="tab:blue")
            ax.set_title(f"cluster {slot + 1} (model {summary.model_index}), "
                         f"size {report.seq_sizes[slot]:.2f}")
            ax.set_xticks(np.arange(len(names)))
            ax.set_xticklabels(names, rotation=45, ha="right")
            ax.set_ylim(0, 1)
            ax.set_ylabel("start probability")
        for slot in range(report.n_clusters, nrows * ncols):
            axes[slot // ncols][slot % ncols].axis("off")
        fig.savefig(path, **_SAVE_KWARGS)
        plt.close(fig)


def save_transition_matrix_figure(report: ClusterReport, path) -> None:
    """Heatmap of each cluster's transition matrix (rows: from, columns: to)."""
    names = report.categories.names
    n_cats = len(names)
    nrows, ncols = _grid(report.n_clusters)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(nrows, ncols, figsize=(4.4 * ncols, 3.8 * nrows), squeeze=False)
        for slot, summary in enumerate(report.clusters):
            ax = axes[slot // ncols][slot % ncols]
            image = ax.imshow(summary.trans_probs, vmin=0.0, vmax=1.0, cmap="viridis")
            ax.set_title(f"cluster {slot + 1} (model {summary.model_index})")
            ax.set_xticks(np.arange(n_cats))
            ax.set_xticklabels(names, rotation=45, ha="right")
            ax.set_yticks(np.arange(n_cats))
            ax.set_yticklabels(names)
            if n_cats <= 10:
                for row in range(n_cats):
                    for col in range(n_cats):
                        value = summary.trans_probs[row, col]
                        ax.text(col, row, f"{value:.2f}", ha="center", va="center",
                                fontsize=5, color="white" if value < 0.6 else "black")
            fig.colorbar(image, ax=ax, fraction=0.046)
        for slot in range(report.n_clusters, nrows * ncols):
            axes[slot // ncols][slot % ncols].axis("off")
        fig.savefig(path, **_SAVE_KWARGS)
        plt.close(fig)


def save_popularity_figure(report: ClusterReport, path) -> None:
    """One bar panel per cluster of the next-step popularity of each category."""
    names = report.categories.names
    nrows, ncols = _grid(report.n_clusters)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(nrows, ncols, figsize=(4.0 * ncols, 2.6 * nrows), squeeze=False)
        for slot, summary in enumerate(report.clusters):
            ax = axes[slot // ncols][slot % ncols]
            ax.bar(np.arange(len(names)), summary.popularity, color="tab:orange")
            ax.set_title(f"cluster {slot + 1} (model {summary.model_index})")
            ax.set_xticks(np.arange(len(names)))
            ax.set_xticklabels(names, rotation=45, ha="right")
            ax.set_ylabel("popularity (column sum)")
        for slot in range(report.n_clusters, nrows * ncols):
            axes[slot // ncols][slot % ncols].axis("off")
        fig.savefig(path, **_SAVE_KWARGS)
        plt.close(fig)
