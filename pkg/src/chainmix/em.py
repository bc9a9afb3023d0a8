"""EM fitting of the chain mixture.

The loop alternates a posterior pass (soft memberships of every sequence in
every cluster) with closed-form weighted-count updates of the mixing
weights, start distributions, and transition rows. It stops when the
corpus log-likelihood improves by less than ``epsilon`` between consecutive
iterations, or after ``max_iters``.

Exactly uniform initial parameters are a fixed point for two or more
clusters: every posterior row equals the mixing weights and all clusters
receive identical updates forever. The default init therefore multiplies
the uniform values by small seeded noise ("uniform-jitter"); pass
``jitter_scale=0`` for the plain uniform start if the fixed point is what
you want to observe.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import (
    CategorySet,
    ChainParams,
    MixtureModel,
    SequenceDataset,
    log_prob_matrix,
    logsumexp,
)

INIT_MODES = ("uniform-jitter", "random")


class DegeneracyError(RuntimeError):
    """Some sequence has probability zero under every cluster.

    Only reachable with alpha = 0 and degenerate parameters; smoothing keeps
    every parameter strictly positive.
    """


@dataclass(frozen=True)
class EmConfig:
    """Knobs of one EM run.

    Attributes:
        n_clusters: number of mixture components to fit.
        epsilon: stop once the log-likelihood improves by less than this.
        max_iters: hard cap on EM iterations.
        alpha: pseudo-count added to every start/transition count before
            normalizing; keeps parameters positive. Use 0 for exact EM.
        init: "uniform-jitter" or "random".
        seed: seed for the init noise (PCG64 via numpy default_rng).
        jitter_scale: relative size of the init perturbation.
    """

    n_clusters: int
    epsilon: float = 1e-4
    max_iters: int = 500
    alpha: float = 1e-6
    init: str = "uniform-jitter"
    seed: int = 0
    jitter_scale: float = 0.01

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be at least 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if not 0.0 <= self.jitter_scale < 1.0:
            raise ValueError("jitter_scale must lie in [0, 1)")


@dataclass(frozen=True)
class PosteriorMatrix:
    """Soft memberships: row s is the distribution of sequence s over clusters."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2:
            raise ValueError("posterior matrix must be 2-d")
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            raise ValueError("posterior entries must lie in [0, 1]")
        sums = probs.sum(axis=1)
        bad = np.abs(sums - 1.0) > 1e-10
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValueError(f"posterior row {i} sums to {sums[i]!r}, expected 1")

    @property
    def n_sequences(self) -> int:
        return self.probs.shape[0]

    @property
    def n_clusters(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class FitResult:
    """Outcome of one EM run.

    ``posteriors`` is the membership matrix that produced the final model's
    parameters (the input of the last maximization pass), so its column
    means equal ``model.weights`` exactly.
    """

    model: MixtureModel
    posteriors: PosteriorMatrix
    log_likelihood_trace: tuple[float, ...]
    iterations: int
    converged: bool
    initial_log_likelihood: float


def initialize(config: EmConfig, categories: CategorySet) -> MixtureModel:
    """Build the starting model for EM; deterministic given config.seed.

    uniform-jitter: mixing weights exactly 1/K; each start vector and
    transition row is the uniform value times (1 + jitter_scale * u) with
    u drawn uniformly from (-1, 1), then renormalized. jitter_scale = 0
    reproduces the exactly uniform start.

    random: every probability vector (weights, starts, transition rows) is
    an independent flat-Dirichlet draw.
    """
    n_clusters, n_cats = config.n_clusters, len(categories)
    rng = np.random.default_rng(config.seed)

    if config.init == "random":
        weights = rng.dirichlet(np.ones(n_clusters))
        clusters = []
        for _ in range(n_clusters):
            start = rng.dirichlet(np.ones(n_cats))
            trans = np.vstack([rng.dirichlet(np.ones(n_cats)) for _ in range(n_cats)])
            clusters.append(ChainParams(start, trans))
        return MixtureModel(categories, weights, tuple(clusters))

    weights = np.full(n_clusters, 1.0 / n_clusters)
    if config.jitter_scale == 0.0:
        uniform = ChainParams(np.full(n_cats, 1.0 / n_cats), np.full((n_cats, n_cats), 1.0 / n_cats))
        return MixtureModel(categories, weights, tuple([uniform] * n_clusters))

    clusters = []
    for _ in range(n_clusters):
        start = (1.0 + config.jitter_scale * rng.uniform(-1.0, 1.0, n_cats)) / n_cats
        trans = (1.0 + config.jitter_scale * rng.uniform(-1.0, 1.0, (n_cats, n_cats))) / n_cats
        clusters.append(ChainParams(start / start.sum(), trans / trans.sum(axis=1, keepdims=True)))
    return MixtureModel(categories, weights, tuple(clusters))


def _posteriors_and_loglik(
    model: MixtureModel, data: SequenceDataset, threads: int = 1
) -> tuple[np.ndarray, float]:
    """Membership matrix of the given model plus its corpus log-likelihood."""
    with np.errstate(divide="ignore"):
        joint = log_prob_matrix(model, data, threads=threads) + np.log(model.weights)
    row_logsum = logsumexp(joint, axis=1)
    dead = ~np.isfinite(row_logsum)
    if np.any(dead):
        i = int(np.argmax(dead))
        seq = data.sequences[i]
        raise DegeneracyError(
            f"sequence {i} (user {seq.user!r}, week {seq.week}) has zero probability "
            f"under every cluster; fit with alpha > 0 to keep parameters positive"
        )
    probs = np.exp(joint - row_logsum[:, None])
    probs /= probs.sum(axis=1, keepdims=True)
    return probs, float(row_logsum.sum())


def e_step(model: MixtureModel, data: SequenceDataset, threads: int = 1) -> PosteriorMatrix:
    """Posterior membership of every sequence in every cluster.

    Row s is weight_i * P(s | chain_i) normalized over i, computed in log
    space; rows sum to 1 within 1e-10.
    """
    probs, _ = _posteriors_and_loglik(model, data, threads=threads)
    return PosteriorMatrix(probs)


def m_step(data: SequenceDataset, posteriors: PosteriorMatrix, alpha: float = 1e-6) -> MixtureModel:
    """Closed-form parameter update from weighted counts.

    New mixing weight i is the mean posterior mass of cluster i. Start and
    transition rows are posterior-weighted counts plus alpha, renormalized.
    A row with zero total count and alpha = 0 becomes uniform: such a row is
    never exercised by the weighted data, so any stochastic row maximizes
    the likelihood equally.
    """
    probs = posteriors.probs
    if probs.shape[0] != len(data):
        raise ValueError(f"posterior matrix has {probs.shape[0]} rows, dataset has {len(data)}")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    starts, counts = data._encoded
    n_cats = len(data.categories)
    n_clusters = probs.shape[1]

    # Same formula as analysis.cluster_sizes_sequences; keep them identical.
    weights = probs.mean(axis=0)
    start_counts = probs.T @ starts + alpha
    trans_counts = (probs.T @ counts).reshape(n_clusters, n_cats, n_cats) + alpha
    clusters = tuple(
        ChainParams(
            _normalize_rows(start_counts[i][None, :])[0],
            _normalize_rows(trans_counts[i]),
        )
        for i in range(n_clusters)
    )
    return MixtureModel(data.categories, weights, clusters)


def _normalize_rows(rows: np.ndarray) -> np.ndarray:
    sums = rows.sum(axis=1, keepdims=True)
    out = rows / np.where(sums == 0.0, 1.0, sums)
    out[sums[:, 0] == 0.0] = 1.0 / rows.shape[1]
    return out


def fit(
    data: SequenceDataset,
    config: EmConfig,
    initial_model: MixtureModel | None = None,
    threads: int = 1,
) -> FitResult:
    """Run EM to convergence (or max_iters) on a sequence corpus.

    One iteration is a posterior pass followed by a parameter update; the
    corpus log-likelihood of the updated model is appended to the trace.
    The run stops once an iteration improves the log-likelihood by less
    than config.epsilon (the first iteration is compared against the
    initial model's log-likelihood). Deterministic given config.seed with
    threads = 1.

    Args:
        data: non-empty corpus.
        config: EM settings; see EmConfig.
        initial_model: optional starting model; defaults to
            initialize(config, data.categories).
        threads: parallelism of the likelihood passes (1 = bit-reproducible).
    """
    if len(data) == 0:
        raise ValueError("cannot fit an empty dataset")
    if len(data) < config.n_clusters:
        warnings.warn(
            f"dataset has {len(data)} sequences but {config.n_clusters} clusters were requested",
            stacklevel=2,
        )
    model = initial_model if initial_model is not None else initialize(config, data.categories)
    if len(model.categories) != len(data.categories):
        raise ValueError("initial model and dataset vocabulary sizes differ")

    probs, previous = _posteriors_and_loglik(model, data, threads=threads)
    posteriors = PosteriorMatrix(probs)
    initial_loglik = previous
    trace: list[float] = []
    converged = False
    final_posteriors = posteriors
    for _ in range(config.max_iters):
        final_posteriors = posteriors
        model = m_step(data, posteriors, config.alpha)
        probs, loglik = _posteriors_and_loglik(model, data, threads=threads)
        posteriors = PosteriorMatrix(probs)
        trace.append(loglik)
        delta = loglik - previous
        previous = loglik
        if delta < config.epsilon:
            converged = True
            break
    return FitResult(
        model=model,
        posteriors=final_posteriors,
        log_likelihood_trace=tuple(trace),
        iterations=len(trace),
        converged=converged,
        initial_log_likelihood=initial_loglik,
    )
