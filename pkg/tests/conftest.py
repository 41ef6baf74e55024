import numpy as np
import pytest

from condmi import BatchPair, Dataset


def make_pair(n, rng, separation=0.0, d=1, k=1):
    """Synthetic labeled batch pair; `separation` shifts the joint class."""
    joint = Dataset(
        rng.normal(separation, 1.0, (n, d)),
        rng.normal(separation, 1.0, (n, d)),
        rng.normal(0.0, 1.0, (n, d)),
    )
    prod = Dataset(
        rng.normal(-separation, 1.0, (n, d)),
        rng.normal(-separation, 1.0, (n, d)),
        rng.normal(0.0, 1.0, (n, d)),
    )
    return BatchPair(joint=joint, prod=prod, k=k)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def small_pair(rng):
    return make_pair(16, rng, separation=0.5)
