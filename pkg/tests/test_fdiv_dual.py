import math

import numpy as np
import pytest

from conftest import random_instance
from mindiv.core import CHI_SQUARED, HELLINGER, KL, DomainError, FiniteDistribution, mean
from mindiv.fdiv_dual import (
    FDualPoint,
    chisq_inf,
    dinf,
    fdiv_dual_objective,
    hellinger_inf,
    reduced_inf,
)
from mindiv.klinf_dual import klinf
from mindiv.primal_oracle import primal_fdiv_finite

HEL_BERN = 2 - 2 * (math.sqrt(0.125) + math.sqrt(0.375))


def test_objective_at_origin(bern05):
    theta = FDualPoint(np.zeros(1), 1.0)
    assert fdiv_dual_objective(bern05, [0.3], theta, KL) == pytest.approx(0.0)
    assert fdiv_dual_objective(bern05, [0.3], theta, HELLINGER) == pytest.approx(-0.5)
    assert fdiv_dual_objective(bern05, [0.3], theta, CHI_SQUARED) == pytest.approx(2 * (math.sqrt(2) - 1) - 1)


def test_objective_outside_domain(bern05):
    # KL needs gamma - lam x > 0 at every atom
    assert fdiv_dual_objective(bern05, [0.3], FDualPoint(np.array([2.0]), 1.0), KL) == -math.inf


def test_fdual_point_helpers():
    th = FDualPoint(np.array([0.5, -1.0]), 2.0)
    assert th.margin == pytest.approx(1.5)
    assert th.feasible(KL)
    assert FDualPoint.from_vector(th.as_vector()).gamma == 2.0
    assert not FDualPoint(np.array([3.0]), 1.0).feasible(HELLINGER)


@pytest.mark.parametrize("spec", [KL, HELLINGER, CHI_SQUARED])
def test_mean_match_gives_zero(spec):
    P = FiniteDistribution([[0.2, 0.3], [0.6, 0.9]], [0.4, 0.6])
    assert dinf(P, mean(P), spec).value == pytest.approx(0.0, abs=1e-12)
    assert reduced_inf(P, mean(P), spec).value == pytest.approx(0.0, abs=1e-12)


def test_binary_examples(bern05):
    assert dinf(bern05, [0.25], HELLINGER).value == pytest.approx(HEL_BERN, abs=1e-7)
    assert hellinger_inf(bern05, [0.25]).value == pytest.approx(HEL_BERN, abs=1e-7)
    assert dinf(bern05, [0.25], CHI_SQUARED).value == pytest.approx(1 / 3, abs=1e-7)
    assert chisq_inf(bern05, [0.25]).value == pytest.approx(1 / 3, abs=1e-7)


def test_reduced_values_nonnegative(rng):
    for _ in range(10):
        P, mu = random_instance(rng, 2)
        assert hellinger_inf(P, mu).value >= 0.0
        assert chisq_inf(P, mu).value >= 0.0


def test_kl_spec_matches_klinf(rng):
    for _ in range(10):
        P, mu = random_instance(rng, int(rng.integers(1, 4)))
        assert dinf(P, mu, "kl").value == pytest.approx(klinf(P, mu).value, abs=1e-6)


@pytest.mark.parametrize("spec", [HELLINGER, CHI_SQUARED])
def test_dual_below_primal(rng, spec):
    for _ in range(5):
        P, mu = random_instance(rng, 2)
        d = dinf(P, mu, spec).value
        p = primal_fdiv_finite(P, mu, spec).value
        assert d <= p + 1e-9
        assert d == pytest.approx(p, abs=1e-6)


def test_no_reduced_dual_for_custom_spec(bern05):
    from dataclasses import replace

    custom = replace(KL, name="custom")
    with pytest.raises(DomainError):
        reduced_inf(bern05, [0.3], custom)
