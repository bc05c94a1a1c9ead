import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mindiv.core import FiniteDistribution

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_instance(rng: np.random.Generator, dim: int, max_atoms: int = 10):
    """A random finite P on [0,1]^K and a mean drawn in [0.1, 0.9]^K."""
    m = int(rng.integers(1, max_atoms + 1))
    P = FiniteDistribution(rng.random((m, dim)), rng.dirichlet(np.ones(m)))
    return P, rng.uniform(0.1, 0.9, dim)


def binary_kl(p, q):
    out = 0.0
    if p > 0:
        out += p * np.log(p / q)
    if p < 1:
        out += (1 - p) * np.log((1 - p) / (1 - q))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def bern05():
    return FiniteDistribution.bernoulli(0.5)
