"""Mean-constrained f-divergence infima through their duals.

The general dual maximizes

    E_P[Phi(gamma - lam^T X)] - (gamma - lam^T mu)

over pairs (lam, gamma) with gamma - sum_j max(lam_j, 0) >= max(-f(0), r_min)
(strict when U_f is open at r_min). For Hellinger and chi-squared the
gamma block can be optimized out, leaving a single vector over L_mu.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _opt
from .core import (
    CHI_SQUARED,
    HELLINGER,
    KL,
    DomainError,
    FDivergenceSpec,
    FiniteDistribution,
    as_point,
    check_interior,
    get_spec,
)
from .klinf_dual import EPS_SCHEDULE, DEFAULT_TOL, MAX_ITER_PER_STAGE, MeanDualVector

# gamma at which Phi'(gamma) = 1, so (0, gamma) has dual value exactly 0
_NEUTRAL_GAMMA = {"kl": 1.0, "hellinger": 0.0, "chi2": 0.0}


@dataclass(frozen=True)
class FDualPoint:
    lam: np.ndarray
    gamma: float

    @property
    def margin(self) -> float:
        """min over the cube of gamma - lam^T x."""
        return float(self.gamma - np.maximum(self.lam, 0.0).sum())

    def feasible(self, spec: FDivergenceSpec) -> bool:
        top = float(np.maximum(self.lam, 0.0).sum())
        return self.gamma + spec.f_at_zero >= top and bool(spec.in_domain(self.margin))

    def as_vector(self) -> np.ndarray:
        return np.append(self.lam, self.gamma)

    @classmethod
    def from_vector(cls, theta) -> "FDualPoint":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:-1].copy(), float(theta[-1]))


@dataclass(frozen=True)
class FdivResult:
    value: float
    argmax: FDualPoint | MeanDualVector
    iterations: int
    converged: bool


def _resolve(spec) -> FDivergenceSpec:
    return get_spec(spec) if isinstance(spec, str) else spec


def _check(P: FiniteDistribution, mu) -> np.ndarray:
    mu = check_interior(mu)
    if mu.shape[0] != P.dim:
        raise DomainError(f"mu has dimension {mu.shape[0]}, P has {P.dim}")
    return mu


def fdiv_dual_objective(P: FiniteDistribution, mu, theta: FDualPoint, spec) -> float:
    """E_P[Phi(gamma - lam^T X)] - (gamma - lam^T mu); -inf outside U_f."""
    spec = _resolve(spec)
    mu = _check(P, mu)
    lam = as_point(theta.lam, P.dim)
    r = theta.gamma - P.atoms @ lam
    if not np.all(spec.in_domain(r)):
        return -np.inf
    return float(P.weights @ spec.phi(r)) - (theta.gamma - float(lam @ mu))


def dinf(
    P: FiniteDistribution,
    mu,
    spec,
    tol: float = DEFAULT_TOL,
    *,
    schedule: tuple[float, ...] = EPS_SCHEDULE,
) -> FdivResult:
    """inf of D_f(P || Q) over Q with mean mu, from the (lam, gamma) dual.

    The feasible set is an epigraph, projected onto exactly. Stages shrink
    it by raising the margin floor by eps; iterates stay where every atom
    has Phi' finite, which loses nothing because Phi' blows up at the
    endpoint of U_f and so the maximizer keeps atoms away from it.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    spec = _resolve(spec)
    mu = _check(P, mu)
    w, x = P.weights, P.atoms
    floor = spec.margin_floor

    def split(theta):
        return theta[:-1], theta[-1]

    def value(theta):
        lam, gamma = split(theta)
        r = gamma - x @ lam
        if np.any(r <= spec.r_min):
            return -np.inf
        return float(w @ spec.phi(r)) - (gamma - float(lam @ mu))

    def grad(theta):
        lam, gamma = split(theta)
        d = spec.phi_prime(gamma - x @ lam) * w
        return np.append(mu - d @ x, d.sum() - 1.0)

    def project_at(eps):
        def project(theta):
            lam, gamma = _opt.project_epigraph(theta[:-1], theta[-1], floor + eps)
            return np.append(lam, gamma)

        return project

    neutral = np.append(np.zeros(P.dim), _NEUTRAL_GAMMA.get(spec.name, 1.0))
    base = value(neutral)
    res = _opt.staged_ascent(
        value, grad, project_at, np.append(np.zeros(P.dim), 1.0), schedule,
        pg_tol=1e-2 * tol, max_iter=MAX_ITER_PER_STAGE,
        baseline=(neutral, base) if np.isfinite(base) else None,
    )
    return FdivResult(res.value, FDualPoint.from_vector(res.x), res.iterations, res.converged)


def _reduced(P, mu, tol, schedule, inner_value, inner_grad):
    """Maximize a concave inner objective of c = 1 - lam^T (X - mu) over L_mu."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    mu = _check(P, mu)
    w, centered = P.weights, P.atoms - mu

    def value(lam):
        c = 1.0 - centered @ lam
        if np.any(c <= 0.0):
            return -np.inf
        return inner_value(w, c)

    def grad(lam):
        c = 1.0 - centered @ lam
        return -(inner_grad(w, c)) @ centered

    def project_at(eps):
        return lambda v: _opt.project_gap_ball(v, mu, 1.0 - eps)

    zero = np.zeros(P.dim)
    res = _opt.staged_ascent(
        value, grad, project_at, zero, schedule,
        pg_tol=1e-2 * tol, max_iter=MAX_ITER_PER_STAGE, baseline=(zero, value(zero)),
    )
    return res, MeanDualVector.at(res.x, mu)


def hellinger_inf(P: FiniteDistribution, mu, tol: float = DEFAULT_TOL, *,
                  schedule: tuple[float, ...] = EPS_SCHEDULE) -> FdivResult:
    """sup over L_mu of 2 - 2 sqrt(E_P[1 / (1 - lam^T (X - mu))])."""
    # maximize the concave -E[1/c]; 2 - 2 sqrt(.) is increasing in it
    res, arg = _reduced(
        P, mu, tol, schedule,
        lambda w, c: -float(w @ (1.0 / c)),
        lambda w, c: w / c**2,
    )
    return FdivResult(2.0 - 2.0 * np.sqrt(-res.value), arg, res.iterations, res.converged)


def chisq_inf(P: FiniteDistribution, mu, tol: float = DEFAULT_TOL, *,
              schedule: tuple[float, ...] = EPS_SCHEDULE) -> FdivResult:
    """sup over L_mu of (E_P[sqrt(1 - lam^T (X - mu))])^2 - 1."""
    res, arg = _reduced(
        P, mu, tol, schedule,
        lambda w, c: float(w @ np.sqrt(c)),
        lambda w, c: 0.5 * w / np.sqrt(c),
    )
    return FdivResult(res.value**2 - 1.0, arg, res.iterations, res.converged)


def reduced_inf(P: FiniteDistribution, mu, spec, tol: float = DEFAULT_TOL) -> FdivResult:
    """Single-vector dual for the divergences that have one."""
    spec = _resolve(spec)
    if spec is HELLINGER:
        return hellinger_inf(P, mu, tol)
    if spec is CHI_SQUARED:
        return chisq_inf(P, mu, tol)
    if spec is KL:
        from .klinf_dual import klinf

        r = klinf(P, mu, tol)
        return FdivResult(r.value, r.argmax, r.iterations, r.converged)
    raise DomainError(f"no reduced dual for {spec.name}")
