import sys
from pathlib import Path

try:
    import chainmix  # noqa: F401
except ImportError:  # running from a checkout without installing
    sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

sys.path.insert(0, str(Path(__file__).resolve().parent))

import numpy as np
import pytest

from chainmix import CategorySet, ChainParams, MixtureModel, Sequence, SequenceDataset

DATA_DIR = Path(__file__).resolve().parent / "data"


def make_seq(states, user="u0", city="testville", week="2010-W01"):
    return Sequence(user=user, city=city, week=week, states=tuple(states))


def random_model(rng, n_clusters, n_cats, floor=0.0):
    """Random valid mixture; floor > 0 keeps every probability strictly positive."""
    names = tuple(f"cat{i}" for i in range(n_cats))

    def simplex(size):
        raw = rng.random(size) + floor
        return raw / raw.sum()

    weights = simplex(n_clusters)
    clusters = tuple(
        ChainParams(simplex(n_cats), np.vstack([simplex(n_cats) for _ in range(n_cats)]))
        for _ in range(n_clusters)
    )
    return MixtureModel(CategorySet(names), weights, clusters)


def random_dataset(rng, n_cats, n_sequences, max_len=12, n_users=None):
    names = tuple(f"cat{i}" for i in range(n_cats))
    seqs = []
    for i in range(n_sequences):
        length = int(rng.integers(1, max_len + 1))
        states = tuple(int(s) for s in rng.integers(0, n_cats, size=length))
        user = f"u{i if n_users is None else int(rng.integers(0, n_users)):04d}"
        seqs.append(make_seq(states, user=user, week=f"2010-W{(i % 50) + 1:02d}"))
    return SequenceDataset(CategorySet(names), tuple(seqs))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cats4():
    return CategorySet(("alpha", "beta", "gamma", "delta"))
