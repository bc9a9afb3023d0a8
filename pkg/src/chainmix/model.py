"""Core types and probability computations for mixtures of Markov chains.

All probabilities are combined on the natural-log scale: the raw product of
per-step probabilities underflows double precision long before a corpus
reaches a realistic size. Every type is an immutable value after
construction and every function here is pure, so the module is safe to use
from multiple threads.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

ROW_SUM_ATOL = 1e-10


class ConvergenceError(RuntimeError):
    """Power iteration did not reach the requested residual.

    Carries the last iterate and its residual so callers can inspect how far
    the iteration got (periodic chains oscillate forever, reducible chains
    may stall).
    """

    def __init__(self, message: str, last_iterate: np.ndarray, residual: float):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _check_probability_rows(rows: np.ndarray, what: str) -> None:
    if np.any(rows < 0.0) or np.any(rows > 1.0):
        raise ValueError(f"{what} entries must lie in [0, 1]")
    sums = rows.sum(axis=1)
    bad = np.abs(sums - 1.0) > ROW_SUM_ATOL
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ValueError(f"{what} {i} sums to {sums[i]!r}, expected 1 within {ROW_SUM_ATOL}")


@dataclass(frozen=True)
class CategorySet:
    """Ordered vocabulary of venue categories; list position is the state index."""

    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if any(not isinstance(name, str) or not name for name in self.names):
            raise ValueError("category names must be non-empty strings")
        if len(set(self.names)) != len(self.names):
            raise ValueError("category names must be unique")
        if len(self.names) < 2:
            raise ValueError("need at least 2 categories")

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._lookup

    def index(self, name: str) -> int:
        return self._lookup[name]

    @cached_property
    def _lookup(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.names)}


@dataclass(frozen=True)
class Sequence:
    """One user's chronological category indices within a single ISO week."""

    user: str
    city: str
    week: str  # ISO week id, "YYYY-Www"
    states: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        if not self.states:
            raise ValueError("a sequence needs at least one check-in")
        if any(s < 0 for s in self.states):
            raise ValueError("state indices must be non-negative")

    def __len__(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class SequenceDataset:
    """A corpus of sequences sharing one category vocabulary."""

    categories: CategorySet
    sequences: tuple[Sequence, ...]

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        n_cats = len(self.categories)
        for seq in self.sequences:
            top = max(seq.states)
            if top >= n_cats:
                raise ValueError(
                    f"sequence for user {seq.user!r} uses state {top}, vocabulary has {n_cats}"
                )

    def __len__(self) -> int:
        return len(self.sequences)

    def user_indices(self) -> dict[str, list[int]]:
        """Sequence positions grouped by user, in first-appearance order."""
        groups: dict[str, list[int]] = {}
        for i, seq in enumerate(self.sequences):
            groups.setdefault(seq.user, []).append(i)
        return groups

    @cached_property
    def _encoded(self) -> tuple[np.ndarray, np.ndarray]:
        # One-hot start states (N, C) and flattened transition counts (N, C*C).
        # Likelihoods over the corpus reduce to two matrix products against
        # the log parameters, which is what makes fitting fast.
        n_cats = len(self.categories)
        starts = np.zeros((len(self), n_cats))
        counts = np.zeros((len(self), n_cats, n_cats))
        for i, seq in enumerate(self.sequences):
            states = np.asarray(seq.states)
            starts[i, states[0]] = 1.0
            if states.size > 1:
                np.add.at(counts[i], (states[:-1], states[1:]), 1.0)
        counts = counts.reshape(len(self), n_cats * n_cats)
        starts.setflags(write=False)
        counts.setflags(write=False)
        return starts, counts


@dataclass(frozen=True)
class ChainParams:
    """Start distribution and row-stochastic transition matrix of one chain."""

    start_probs: np.ndarray
    trans_probs: np.ndarray

    def __post_init__(self):
        start = _readonly(self.start_probs)
        trans = _readonly(self.trans_probs)
        object.__setattr__(self, "start_probs", start)
        object.__setattr__(self, "trans_probs", trans)
        if start.ndim != 1 or trans.shape != (start.shape[0], start.shape[0]):
            raise ValueError("start_probs must have length C and trans_probs must be C x C")
        _check_probability_rows(start[None, :], "start distribution")
        _check_probability_rows(trans, "transition row")

    @property
    def n_categories(self) -> int:
        return self.start_probs.shape[0]


@dataclass(frozen=True)
class MixtureModel:
    """K Markov chains plus the mixing distribution over them."""

    categories: CategorySet
    weights: np.ndarray
    clusters: tuple[ChainParams, ...]

    def __post_init__(self):
        weights = _readonly(self.weights)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "clusters", tuple(self.clusters))
        if weights.ndim != 1 or weights.shape[0] < 1:
            raise ValueError("weights must be a non-empty vector")
        if len(self.clusters) != weights.shape[0]:
            raise ValueError("need exactly one ChainParams per mixing weight")
        _check_probability_rows(weights[None, :], "mixing distribution")
        for chain in self.clusters:
            if chain.n_categories != len(self.categories):
                raise ValueError(
                    f"cluster has {chain.n_categories} states, vocabulary has {len(self.categories)}"
                )

    @property
    def n_clusters(self) -> int:
        return self.weights.shape[0]

    def to_json(self) -> str:
        """Serialize to the documented model JSON (lossless float round-trip)."""
        doc = {
            "categories": list(self.categories.names),
            "K": self.n_clusters,
            "p": self.weights.tolist(),
            "clusters": [
                {"f": chain.start_probs.tolist(), "T": chain.trans_probs.tolist()}
                for chain in self.clusters
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MixtureModel":
        doc = json.loads(text)
        categories = CategorySet(tuple(doc["categories"]))
        clusters = tuple(ChainParams(c["f"], c["T"]) for c in doc["clusters"])
        model = cls(categories, doc["p"], clusters)
        if model.n_clusters != int(doc["K"]):
            raise ValueError(f"model file claims K={doc['K']} but lists {model.n_clusters} clusters")
        return model


def logsumexp(values: np.ndarray, axis=None) -> np.ndarray:
    """log(sum(exp(values))) with the usual max shift; -inf entries are fine."""
    values = np.asarray(values, dtype=float)
    shift = np.max(values, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(values - shift).sum(axis=axis)) + np.squeeze(shift, axis=axis)
    return out


def sequence_log_prob(chain: ChainParams, seq: Sequence) -> float:
    """Log-probability of one sequence under one chain.

    The value is log of (start probability of the first state times the
    transition probability of each consecutive pair). Returns -inf whenever
    any factor is exactly zero.
    """
    states = np.asarray(seq.states)
    top = int(states.max())
    if top >= chain.n_categories:
        raise ValueError(f"sequence uses state {top}, chain has {chain.n_categories} states")
    with np.errstate(divide="ignore"):
        total = np.log(chain.start_probs[states[0]])
        if states.size > 1:
            total = total + np.log(chain.trans_probs[states[:-1], states[1:]]).sum()
    return float(total)


def mixture_log_prob(model: MixtureModel, seq: Sequence) -> float:
    """Log-probability of a sequence under the mixture (law of total probability)."""
    per_chain = np.array([sequence_log_prob(chain, seq) for chain in model.clusters])
    with np.errstate(divide="ignore"):
        log_weights = np.log(model.weights)
    return float(logsumexp(per_chain + log_weights))


def log_prob_matrix(model: MixtureModel, data: SequenceDataset, threads: int = 1) -> np.ndarray:
    """Matrix of per-cluster sequence log-probabilities, shape (N, K).

    Entry (s, i) is log P(sequence s | cluster i's chain); -inf where a zero
    parameter is actually exercised by the sequence. With threads > 1 the
    rows are computed in parallel blocks; values agree with the
    single-threaded result to well under 1e-10.
    """
    if len(model.categories) != len(data.categories):
        raise ValueError(
            f"model has {len(model.categories)} categories, dataset has {len(data.categories)}"
        )
    starts, counts = data._encoded
    n_clusters, n_cats = model.n_clusters, len(model.categories)

    log_start = np.zeros((n_clusters, n_cats))
    zero_start = np.zeros((n_clusters, n_cats))
    log_trans = np.zeros((n_clusters, n_cats * n_cats))
    zero_trans = np.zeros((n_clusters, n_cats * n_cats))
    for i, chain in enumerate(model.clusters):
        flat_trans = chain.trans_probs.reshape(-1)
        zero_start[i] = chain.start_probs == 0.0
        zero_trans[i] = flat_trans == 0.0
        with np.errstate(divide="ignore"):
            log_start[i] = np.where(zero_start[i] > 0, 0.0, np.log(chain.start_probs))
            log_trans[i] = np.where(zero_trans[i] > 0, 0.0, np.log(flat_trans))

    def block(lo: int, hi: int) -> np.ndarray:
        out = starts[lo:hi] @ log_start.T + counts[lo:hi] @ log_trans.T
        # A sequence that exercises any zero-probability factor has probability 0.
        hits = starts[lo:hi] @ zero_start.T + counts[lo:hi] @ zero_trans.T
        out[hits > 0.5] = -np.inf
        return out

    if threads <= 1 or len(data) < 2 * threads:
        return block(0, len(data))
    bounds = np.linspace(0, len(data), threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda b: block(b[0], b[1]), zip(bounds[:-1], bounds[1:])))
    return np.vstack(parts)


def corpus_log_likelihood(model: MixtureModel, data: SequenceDataset, threads: int = 1) -> float:
    """Log-likelihood of the whole corpus: sum over sequences of the mixture log-probability."""
    if len(data) == 0:
        raise ValueError("corpus log-likelihood of an empty dataset is undefined")
    with np.errstate(divide="ignore"):
        joint = log_prob_matrix(model, data, threads=threads) + np.log(model.weights)
    return float(np.sum(logsumexp(joint, axis=1)))


def stationary_distribution(
    chain: ChainParams, tol: float = 1e-10, max_iters: int = 10_000
) -> np.ndarray:
    """Fixed point pi @ T == pi of the chain's transition matrix, by power iteration.

    The start vector is a fixed, mildly asymmetric ramp rather than the
    uniform vector: uniform is an (unstable) fixed point of every doubly
    stochastic matrix, so starting there would silently "converge" on
    periodic permutation chains instead of surfacing the oscillation.

    Raises ConvergenceError after max_iters, carrying the last iterate and
    its residual.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n_cats = chain.n_categories
    current = np.arange(1, n_cats + 1, dtype=float)
    current /= current.sum()
    residual = np.inf
    for _ in range(max_iters):
        nxt = current @ chain.trans_probs
        nxt /= nxt.sum()
        residual = float(np.max(np.abs(nxt @ chain.trans_probs - nxt)))
        if residual <= tol:
            return nxt
        current = nxt
    raise ConvergenceError(
        f"power iteration did not reach residual {tol} in {max_iters} iterations "
        f"(last residual {residual:.3e}); the chain may be periodic or reducible",
        last_iterate=current,
        residual=residual,
    )
