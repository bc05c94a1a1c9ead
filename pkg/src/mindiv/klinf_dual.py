"""Mean-constrained KLinf through its finite-support dual.

For P with finite support and mu in the open cube,

    KLinf(P, mu) = max_{lam in L_mu} E_P[log(1 - lam^T (X - mu))],
    L_mu = {lam : 1 - lam^T (x - mu) >= 0 for all x in [0,1]^K},

and L_mu is the unit ball of the (asymmetric, weighted l1) gauge
``support_gap(., mu)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _opt
from .core import DomainError, FiniteDistribution, as_point, check_interior, mean

EPS_SCHEDULE = (1e-2, 1e-4, 1e-6, 0.0)
DEFAULT_TOL = 1e-7
MAX_ITER_PER_STAGE = 2000


@dataclass(frozen=True)
class MeanDualVector:
    lam: np.ndarray
    gap: float

    @classmethod
    def at(cls, lam, mu) -> "MeanDualVector":
        lam = np.asarray(lam, dtype=float)
        return cls(lam, _opt.support_gap(lam, np.asarray(mu, dtype=float)))

    @property
    def feasible(self) -> bool:
        return self.gap <= 1.0 + 1e-12

    def in_interior(self, eps: float) -> bool:
        return self.gap <= 1.0 - eps


@dataclass(frozen=True)
class KlinfResult:
    value: float
    argmax: MeanDualVector
    iterations: int
    converged: bool


def support_gap(lam, mu) -> float:
    """sup over the cube of lam^T (x - mu); lam is feasible iff this is <= 1."""
    mu = check_interior(mu)
    return _opt.support_gap(as_point(lam, mu.shape[0]), mu)


def _check(P: FiniteDistribution, mu) -> np.ndarray:
    mu = check_interior(mu)
    if mu.shape[0] != P.dim:
        raise DomainError(f"mu has dimension {mu.shape[0]}, P has {P.dim}")
    return mu


def _margins(P: FiniteDistribution, mu: np.ndarray, lam: np.ndarray) -> np.ndarray:
    return 1.0 - (P.atoms - mu) @ lam


def dual_objective(P: FiniteDistribution, mu, lam) -> float:
    """E_P[log(1 - lam^T (X - mu))], or -inf when some atom has margin <= 0."""
    mu = _check(P, mu)
    lam = as_point(lam, P.dim)
    return _objective(P.weights, P.atoms - mu, lam)


def _objective(w: np.ndarray, centered: np.ndarray, lam: np.ndarray) -> float:
    c = 1.0 - centered @ lam
    if np.any(c <= 0.0):
        return -np.inf
    return float(w @ np.log(c))


def _gradient(w: np.ndarray, centered: np.ndarray, lam: np.ndarray) -> np.ndarray:
    c = 1.0 - centered @ lam
    return -(w / c) @ centered


def dual_gradient(P: FiniteDistribution, mu, lam) -> np.ndarray:
    mu = _check(P, mu)
    lam = as_point(lam, P.dim)
    centered = P.atoms - mu
    if np.any(1.0 - centered @ lam <= 0.0):
        raise DomainError("dual objective is not finite at this lambda")
    return _gradient(P.weights, centered, lam)


def klinf(
    P: FiniteDistribution,
    mu,
    tol: float = DEFAULT_TOL,
    *,
    init=None,
    target: float | None = None,
    schedule: tuple[float, ...] = EPS_SCHEDULE,
) -> KlinfResult:
    """Maximize the dual over L_mu by staged projected-gradient ascent.

    Each stage restricts to the shrunken set (1 - eps) L_mu and warm-starts
    from the previous one; the last stage (eps = 0) works on L_mu itself,
    where the maximum is attained because the objective diverges to -inf
    whenever an atom's margin vanishes. ``init`` warm-starts the first
    stage. ``target`` stops early once the dual value reaches it; the
    returned value is then a certified lower bound, not the maximum.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    mu = _check(P, mu)
    w, centered = P.weights, P.atoms - mu
    pg_tol = 1e-2 * tol

    def value(lam):
        return _objective(w, centered, lam)

    def grad(lam):
        return _gradient(w, centered, lam)

    lam = np.zeros(P.dim) if init is None else as_point(init, P.dim).copy()
    if init is not None and not np.isfinite(value(_opt.project_gap_ball(lam, mu, 1.0 - schedule[0]))):
        lam = np.zeros(P.dim)

    def project_at(eps):
        return lambda v: _opt.project_gap_ball(v, mu, 1.0 - eps)

    res = _opt.staged_ascent(
        value, grad, project_at, lam, schedule, pg_tol=pg_tol, max_iter=MAX_ITER_PER_STAGE,
        target=target, baseline=(np.zeros(P.dim), 0.0),
    )
    return KlinfResult(res.value, MeanDualVector.at(res.x, mu), res.iterations, res.converged)


def klinf_point_mass(x, mu) -> float:
    """KLinf(delta_x, mu): the dual optimum is a vertex of L_mu.

    With d = mu - x, max_{lam in L_mu} lam^T d is the dual gauge
    max_j max(d_j / (1 - mu_j), -d_j / mu_j), so the value is log(1 + that).
    """
    mu = check_interior(mu)
    d = mu - as_point(x, mu.shape[0])
    return float(np.log1p(np.max(np.maximum(d / (1.0 - mu), -d / mu))))


def is_mean_match(P: FiniteDistribution, mu, tol: float = 1e-12) -> bool:
    return bool(np.max(np.abs(mean(P) - np.asarray(mu, dtype=float))) <= tol)
