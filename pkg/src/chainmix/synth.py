"""Ancestral sampling from a fitted or hand-built mixture model.

Used to make synthetic fixtures with known ground truth: draw a cluster
from the mixing weights, a first state from that chain's start
distribution, then walk the transition matrix.

The generator is numpy's default_rng (PCG64). The draw order is part of the
determinism contract: cluster labels first (one bulk draw), then sequence
lengths (one bulk draw), then one bulk uniform draw per sequence consumed
as start + transitions. Same seed, same bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MixtureModel, Sequence, SequenceDataset

SYNTH_CITY = "synthetic"
SYNTH_WEEK = "2000-W01"


@dataclass(frozen=True)
class SynthConfig:
    """Sample size, sequence length (fixed int or inclusive (lo, hi)), seed."""

    n_sequences: int
    length: int | tuple[int, int] = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_sequences < 1:
            raise ValueError("n_sequences must be at least 1")
        if isinstance(self.length, tuple):
            lo, hi = self.length
            if lo < 1 or hi < lo:
                raise ValueError("length range must satisfy 1 <= lo <= hi")
        elif self.length < 1:
            raise ValueError("length must be at least 1")


def sample(model: MixtureModel, config: SynthConfig) -> tuple[SequenceDataset, np.ndarray]:
    """Draw sequences from the mixture; returns (dataset, true cluster labels).

    Every sequence gets its own synthetic user id, so per-user downsampling
    is a no-op on fixtures unless a test rewrites the users.
    """
    rng = np.random.default_rng(config.seed)
    n = config.n_sequences
    labels = rng.choice(model.n_clusters, size=n, p=model.weights)
    if isinstance(config.length, tuple):
        lengths = rng.integers(config.length[0], config.length[1] + 1, size=n)
    else:
        lengths = np.full(n, config.length, dtype=int)

    top = len(model.categories) - 1
    start_cum = [np.cumsum(chain.start_probs) for chain in model.clusters]
    trans_cum = [np.cumsum(chain.trans_probs, axis=1) for chain in model.clusters]

    sequences = []
    for idx in range(n):
        cluster = int(labels[idx])
        draws = rng.random(int(lengths[idx]))
        state = min(int(np.searchsorted(start_cum[cluster], draws[0], side="right")), top)
        states = [state]
        rows = trans_cum[cluster]
        for u in draws[1:]:
            state = min(int(np.searchsorted(rows[state], u, side="right")), top)
            states.append(state)
        sequences.append(
            Sequence(user=f"u{idx:05d}", city=SYNTH_CITY, week=SYNTH_WEEK, states=tuple(states))
        )
    return SequenceDataset(model.categories, tuple(sequences)), labels.astype(np.int64)


def write_labels(path, labels: np.ndarray) -> None:
    """Sidecar ground-truth file: one integer label per line."""
    with open(path, "w", encoding="utf-8") as handle:
        for label in labels:
            handle.write(f"{int(label)}\n")


def read_labels(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as handle:
        return np.array([int(line) for line in handle if line.strip()], dtype=np.int64)
