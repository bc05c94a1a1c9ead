import math

import numpy as np
import pytest

from conftest import binary_kl, random_instance
from mindiv.channel import DyadicGrid, pushforward
from mindiv.core import CHI_SQUARED, HELLINGER, KL, FiniteDistribution, kl_divergence, mean, f_divergence
from mindiv.primal_oracle import (
    convergence_probe,
    primal_fdiv_finite,
    primal_klinf_finite,
    project_floored_simplex,
    restricted_support,
)


def test_restricted_support_examples(bern05):
    np.testing.assert_array_equal(restricted_support(bern05)[:, 0], [0.0, 1.0])
    np.testing.assert_allclose(
        restricted_support(FiniteDistribution.point_mass([0.3]))[:, 0], [0.0, 0.3, 1.0]
    )
    assert len(restricted_support(FiniteDistribution.point_mass([0.5, 0.5]))) == 5


def test_mean_match_returns_p():
    P = FiniteDistribution([[0.2], [0.7]], [0.5, 0.5])
    res = primal_klinf_finite(P, mean(P))
    assert res.value == pytest.approx(0.0, abs=1e-12)
    assert res.Q.allclose(P, atol=1e-8) or kl_divergence(P, res.Q) < 1e-12


def test_bernoulli_examples(bern05):
    res = primal_klinf_finite(bern05, [0.25])
    assert res.value == pytest.approx(binary_kl(0.5, 0.25), abs=1e-10)
    assert res.Q.allclose(FiniteDistribution.bernoulli(0.25), atol=1e-8)
    hel = 2 - 2 * (math.sqrt(0.125) + math.sqrt(0.375))
    assert primal_fdiv_finite(bern05, [0.25], HELLINGER).value == pytest.approx(hel, abs=1e-10)
    assert primal_fdiv_finite(bern05, [0.25], CHI_SQUARED).value == pytest.approx(1 / 3, abs=1e-10)


def test_minimizer_is_feasible_and_consistent(rng):
    for _ in range(10):
        P, mu = random_instance(rng, int(rng.integers(1, 4)))
        res = primal_klinf_finite(P, mu)
        np.testing.assert_allclose(mean(res.Q), mu, atol=1e-9)
        assert res.value == pytest.approx(kl_divergence(P, res.Q), abs=1e-9)
        for spec in (HELLINGER, CHI_SQUARED):
            r = primal_fdiv_finite(P, mu, spec)
            assert r.value == pytest.approx(f_divergence(P, r.Q, spec), abs=1e-9)


def test_project_floored_simplex():
    v = np.array([0.9, 0.5, -0.3])
    lo = np.array([0.0, 0.1, 0.1])
    q = project_floored_simplex(v, lo)
    assert q.sum() == pytest.approx(1.0)
    assert np.all(q >= lo - 1e-15)


def test_convergence_probe_constant_on_vertices():
    P = FiniteDistribution([[0.25], [0.75]], [0.3, 0.7])
    rows = convergence_probe(P, [0.4], range(2, 6))
    vals = [v for _, v in rows]
    np.testing.assert_allclose(vals, vals[-1], atol=1e-8)


def test_convergence_probe_monotone(rng):
    P, mu = random_instance(rng, 1)
    P = FiniteDistribution(rng.random((10, 1)), rng.dirichlet(np.ones(10)))
    rows = convergence_probe(P, mu, range(1, 11))
    vals = [v for _, v in rows[:-1]]
    assert all(b >= a - 1e-7 for a, b in zip(vals, vals[1:]))
    assert abs(vals[-1] - rows[-1][1]) <= 1e-3
