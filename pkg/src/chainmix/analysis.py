"""Post-fit analytics: cluster sizes, category popularity, assignment, forecasting.

Cluster sizes come in two flavors. The sequence-level vector is the column
mean of the posterior matrix (identical to the fitted mixing weights). The
user-level vector first averages each user's posterior rows, then averages
those per-user vectors, so a hyperactive user counts exactly as much as one
with a couple of sequences.

Category popularity of a cluster is the column-sum vector of its transition
matrix: entry k says how often category k is the next step for members of
that cluster.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .em import PosteriorMatrix, e_step
from .model import (
    CategorySet,
    ChainParams,
    MixtureModel,
    Sequence,
    SequenceDataset,
    stationary_distribution,
)


def cluster_sizes_sequences(posteriors: PosteriorMatrix) -> np.ndarray:
    """Share of the corpus soft-assigned to each cluster (column means)."""
    return posteriors.probs.mean(axis=0)


def cluster_sizes_users(data: SequenceDataset, posteriors: PosteriorMatrix) -> np.ndarray:
    """Cluster sizes recomputed over users: average the per-user averages."""
    probs = posteriors.probs
    if probs.shape[0] != len(data):
        raise ValueError(f"posterior matrix has {probs.shape[0]} rows, dataset has {len(data)}")
    per_user = [probs[indices].mean(axis=0) for indices in data.user_indices().values()]
    return np.vstack(per_user).mean(axis=0)


def popularity_vector(chain: ChainParams) -> np.ndarray:
    """Column sums of the transition matrix; entries total C for any valid chain."""
    return chain.trans_probs.sum(axis=0)


def top_categories(chain: ChainParams, categories: CategorySet, k: int) -> list[tuple[str, float]]:
    """The k most popular next-step categories, descending; ties go to the lower index."""
    if not 1 <= k <= len(categories):
        raise ValueError(f"k must lie in [1, {len(categories)}]")
    pop = popularity_vector(chain)
    order = sorted(range(len(categories)), key=lambda j: (-pop[j], j))
    return [(categories.names[j], float(pop[j])) for j in order[:k]]


def top_transitions(
    chain: ChainParams, categories: CategorySet, k: int
) -> list[tuple[tuple[str, str], float]]:
    """The k largest transition probabilities as ((from, to), value), descending."""
    n_cats = len(categories)
    if not 1 <= k <= n_cats * n_cats:
        raise ValueError(f"k must lie in [1, {n_cats * n_cats}]")
    cells = [(row, col) for row in range(n_cats) for col in range(n_cats)]
    cells.sort(key=lambda rc: (-chain.trans_probs[rc], rc))
    return [
        ((categories.names[row], categories.names[col]), float(chain.trans_probs[row, col]))
        for row, col in cells[:k]
    ]


def assign_user(model: MixtureModel, user_sequences: list[Sequence]) -> tuple[int, np.ndarray]:
    """Most probable cluster for a user, given all of their sequences.

    Averages the per-sequence posterior rows into one membership vector and
    returns (argmax index, vector); ties go to the lowest index.
    """
    if not user_sequences:
        raise ValueError("need at least one sequence to assign a user")
    dataset = SequenceDataset(model.categories, tuple(user_sequences))
    memberships = e_step(model, dataset).probs.mean(axis=0)
    return int(np.argmax(memberships)), memberships


def forecast_user(
    model: MixtureModel,
    user_sequences: list[Sequence],
    tol: float = 1e-10,
    max_iters: int = 10_000,
) -> tuple[int, np.ndarray]:
    """Assign the user to a cluster, then return that chain's stationary distribution.

    The stationary distribution is the long-run category frequency of the
    assigned cluster's chain, i.e. the typical trajectory forecast.
    Propagates ConvergenceError from the stationary solve.
    """
    cluster, _ = assign_user(model, user_sequences)
    return cluster, stationary_distribution(model.clusters[cluster], tol=tol, max_iters=max_iters)


@dataclass(frozen=True)
class ClusterSummary:
    """Per-cluster slice of a report: parameters plus derived rankings."""

    model_index: int
    start_probs: np.ndarray
    trans_probs: np.ndarray
    popularity: np.ndarray
    top_categories: tuple[tuple[str, float], ...]
    top_transitions: tuple[tuple[tuple[str, str], float], ...]


@dataclass(frozen=True)
class ClusterReport:
    """Everything the report renderers need, clusters ordered by descending size.

    seq_sizes and user_sizes are aligned with ``clusters`` (report order);
    ClusterSummary.model_index maps each slot back to the fitted model.
    """

    categories: CategorySet
    seq_sizes: np.ndarray
    user_sizes: np.ndarray
    clusters: tuple[ClusterSummary, ...]

    def __post_init__(self):
        if abs(self.seq_sizes.sum() - 1.0) > 1e-10 or abs(self.user_sizes.sum() - 1.0) > 1e-10:
            raise ValueError("cluster size vectors must each sum to 1")
        for summary in self.clusters:
            if abs(summary.popularity.sum() - len(self.categories)) > 1e-9:
                raise ValueError("popularity vector must sum to the number of categories")

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


def build_report(
    model: MixtureModel,
    data: SequenceDataset,
    posteriors: PosteriorMatrix,
    top_k: int = 3,
) -> ClusterReport:
    """Assemble the full report; cluster labels are arbitrary, so slots are
    ordered by descending sequence-level size (ties by model index)."""
    if posteriors.n_clusters != model.n_clusters:
        raise ValueError(
            f"posterior matrix has {posteriors.n_clusters} clusters, model has {model.n_clusters}"
        )
    seq_sizes = cluster_sizes_sequences(posteriors)
    user_sizes = cluster_sizes_users(data, posteriors)
    order = sorted(range(model.n_clusters), key=lambda i: (-seq_sizes[i], i))
    summaries = tuple(
        ClusterSummary(
            model_index=i,
            start_probs=model.clusters[i].start_probs,
            trans_probs=model.clusters[i].trans_probs,
            popularity=popularity_vector(model.clusters[i]),
            top_categories=tuple(top_categories(model.clusters[i], model.categories, top_k)),
            top_transitions=tuple(top_transitions(model.clusters[i], model.categories, top_k)),
        )
        for i in order
    )
    return ClusterReport(
        categories=model.categories,
        seq_sizes=seq_sizes[order],
        user_sizes=user_sizes[order],
        clusters=summaries,
    )


def report_to_json(report: ClusterReport) -> str:
    """Full-precision JSON rendering of a report."""
    doc = {
        "categories": list(report.categories.names),
        "K": report.n_clusters,
        "cluster_order": [summary.model_index for summary in report.clusters],
        "p_seqs": report.seq_sizes.tolist(),
        "p_users": report.user_sizes.tolist(),
        "clusters": [
            {
                "model_index": summary.model_index,
                "f": summary.start_probs.tolist(),
                "T": summary.trans_probs.tolist(),
                "popularity": summary.popularity.tolist(),
                "top_categories": [[name, value] for name, value in summary.top_categories],
                "top_transitions": [
                    [[src, dst], value] for (src, dst), value in summary.top_transitions
                ],
            }
            for summary in report.clusters
        ],
    }
    return json.dumps(doc, indent=2)


def render_report_text(report: ClusterReport) -> str:
    """Human-readable report: sizes, start probabilities, and the
    "category, popularity" rows per cluster. Values rounded to 2 decimals
    for presentation only."""
    names = report.categories.names
    lines = [
        f"{report.n_clusters} clusters over {len(names)} categories",
        "p_seqs  = (" + ", ".join(f"{v:.2f}" for v in report.seq_sizes) + ")",
        "p_users = (" + ", ".join(f"{v:.2f}" for v in report.user_sizes) + ")",
    ]
    for slot, summary in enumerate(report.clusters, start=1):
        lines.append("")
        lines.append(
            f"Cluster {slot} (model index {summary.model_index}): "
            f"p_seqs={report.seq_sizes[slot - 1]:.2f}, p_users={report.user_sizes[slot - 1]:.2f}"
        )
        lines.append("  start probabilities:")
        for name, value in zip(names, summary.start_probs):
            lines.append(f"    {name}, {value:.2f}")
        lines.append("  top categories (popularity):")
        for name, value in summary.top_categories:
            lines.append(f"    {name}, {value:.2f}")
        lines.append("  top transitions:")
        for (src, dst), value in summary.top_transitions:
            lines.append(f"    {src} -> {dst}, {value:.2f}")
    return "\n".join(lines) + "\n"
