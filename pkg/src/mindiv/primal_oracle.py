"""Primal solvers for the restricted finite problem, independent of any dual formula.

The minimizing Q can always be taken on supp(P) together with the cube's
corners, so the primal is a smooth convex program over the polytope
{q >= 0, sum q = 1, sum_x q_x x = mu}. We follow the primal log-barrier
path from a strictly feasible point and finish with an active-set Newton
polish on the face the path identified. Only the primal objective and its
derivatives are used, so agreement with the dual solvers is independent
evidence.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .core import (
    KL,
    DomainError,
    FDivergenceSpec,
    FiniteDistribution,
    check_interior,
)

MAX_CORNER_DIM = 10


def corners(dim: int) -> np.ndarray:
    return np.array(list(itertools.product((0.0, 1.0), repeat=dim)))


def restricted_support(P: FiniteDistribution) -> np.ndarray:
    """supp(P) together with {0,1}^K, deduplicated and sorted."""
    if P.dim > MAX_CORNER_DIM:
        raise DomainError(f"K={P.dim} too large to enumerate 2^K corners (cap {MAX_CORNER_DIM})")
    pts = np.vstack([P.atoms, corners(P.dim)])
    return np.unique(pts, axis=0)


def _product_bernoulli(pts: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Masses of the product-Bernoulli(x) law on the corner rows of pts."""
    is_corner = np.all((pts == 0.0) | (pts == 1.0), axis=1)
    probs = np.prod(np.where(pts == 1.0, x, 1.0 - x), axis=1)
    return np.where(is_corner, probs, 0.0)


def interior_point(pts: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """A feasible q with every coordinate strictly positive.

    Start from the product-Bernoulli(mu) law on the corners and, for each
    non-corner point x, move a small mass eps from the product-Bernoulli(x)
    law (which has mean x) onto x itself; means are unchanged.
    """
    q = _product_bernoulli(pts, mu)
    interior = np.flatnonzero(~np.all((pts == 0.0) | (pts == 1.0), axis=1))
    if len(interior):
        eps = 0.5 * q[q > 0].min() / len(interior)
        for i in interior:
            q = q - eps * _product_bernoulli(pts, pts[i])
            q[i] += eps
    return q


# -- projections ---------------------------------------------------------------


def project_floored_simplex(v: np.ndarray, lower: np.ndarray) -> np.ndarray:
    """Projection onto {q >= lower, sum q = 1} (sort-based)."""
    budget = 1.0 - lower.sum()
    u = v - lower
    s = np.sort(u)[::-1]
    css = np.cumsum(s) - budget
    idx = np.arange(1, len(u) + 1)
    rho = np.nonzero(s - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(u - theta, 0.0) + lower


class _Polytope:
    """{q >= lower, 1^T q = 1, X^T q = mu} with an exact Euclidean projector."""

    def __init__(self, pts: np.ndarray, mu: np.ndarray, lower: np.ndarray):
        self.M = np.vstack([np.ones(len(pts)), pts.T])
        self.b = np.concatenate([[1.0], mu])
        self.pinv = np.linalg.pinv(self.M)
        self.lower = lower

    def affine(self, v: np.ndarray) -> np.ndarray:
        return v - self.pinv @ (self.M @ v - self.b)

    def residual(self, q: np.ndarray) -> float:
        return float(np.max(np.abs(self.M @ q - self.b)))

    def project(self, v: np.ndarray) -> np.ndarray:
        """Exact projection by semismooth Newton on the (K+1)-dim dual.

        The projection is q(nu) = max(v + M^T nu, lower) where nu solves
        M q(nu) = b. Dykstra's alternating projections are the fallback.
        """
        nu = np.zeros(self.M.shape[0])
        for _ in range(100):
            z = v + self.M.T @ nu
            q = np.maximum(z, self.lower)
            r = self.b - self.M @ q
            if float(np.max(np.abs(r))) <= 1e-15:
                return q
            Ma = self.M[:, z > self.lower]
            step = np.linalg.solve(Ma @ Ma.T + 1e-14 * np.eye(len(nu)), r)
            base = self._dual_value(v, nu)
            t = 1.0
            while t > 1e-12 and self._dual_value(v, nu + t * step) > base - 1e-4 * t * float(r @ step):
                t *= 0.5
            nu = nu + t * step
        q = np.maximum(v + self.M.T @ nu, self.lower)
        if self.residual(q) <= 1e-13:
            return q
        return self.dykstra(v)

    def _dual_value(self, v: np.ndarray, nu: np.ndarray) -> float:
        # negated Lagrangian dual of the projection; minimized over nu
        q = np.maximum(v + self.M.T @ nu, self.lower)
        return -(0.5 * float((q - v) @ (q - v)) - float(nu @ (self.M @ q - self.b)))

    def dykstra(self, v: np.ndarray, max_iter: int = 20000, tol: float = 1e-15) -> np.ndarray:
        x = v.copy()
        p = np.zeros_like(v)
        r = np.zeros_like(v)
        for _ in range(max_iter):
            y = self.affine(x + p)
            p = x + p - y
            x_new = project_floored_simplex(y + r, self.lower)
            r = y + r - x_new
            moved = float(np.max(np.abs(x_new - x)))
            x = x_new
            if moved <= tol and self.residual(x) <= 1e-14:
                break
        return x


# -- objectives -----------------------------------------------------------------


def _ftilde_prime(spec: FDivergenceSpec, w):
    if spec.name == "kl":
        return -1.0 / w
    if spec.name == "hellinger":
        return 1.0 - 1.0 / np.sqrt(w)
    if spec.name == "chi2":
        return 1.0 - 1.0 / w**2
    raise DomainError(f"no primal derivative for {spec.name}")


def _ftilde_second(spec: FDivergenceSpec, w):
    if spec.name == "kl":
        return 1.0 / w**2
    if spec.name == "hellinger":
        return 0.5 * w**-1.5
    if spec.name == "chi2":
        return 2.0 / w**3
    raise DomainError(f"no primal derivative for {spec.name}")


class _Objective:
    """sum_{x in supp P} p_x f_tilde(q_x / p_x) + f(0) * sum_{x off supp P} q_x."""

    def __init__(self, p_full: np.ndarray, spec: FDivergenceSpec):
        self.on = p_full > 0
        self.p = p_full[self.on]
        self.spec = spec

    def value(self, q: np.ndarray) -> float:
        qa = q[self.on]
        if np.any(qa <= 0):
            return np.inf
        w = qa / self.p
        return float(self.p @ self.spec.f_tilde(w)) + self.spec.f_at_zero * float(q[~self.on].sum())

    def grad(self, q: np.ndarray) -> np.ndarray:
        g = np.full(q.shape, self.spec.f_at_zero)
        g[self.on] = _ftilde_prime(self.spec, q[self.on] / self.p)
        return g

    def hess_diag(self, q: np.ndarray) -> np.ndarray:
        h = np.zeros_like(q)
        h[self.on] = _ftilde_second(self.spec, q[self.on] / self.p) / self.p
        return h


# -- solver ---------------------------------------------------------------------


@dataclass(frozen=True)
class PrimalResult:
    value: float
    Q: FiniteDistribution
    support: np.ndarray
    q: np.ndarray
    feasibility_residual: float
    iterations: int


def _barrier(obj: _Objective, poly: _Polytope, q0: np.ndarray, gap: float = 1e-7):
    """Primal log-barrier path following from a strictly feasible q0.

    Minimizes t F(q) - sum log q over {M q = b} by equality-constrained
    Newton steps for t = 1, 10, 100, ... until the barrier gap n / t is
    below ``gap``. Much further than that the Newton systems lose
    conditioning, so the active-set polish takes over.
    """
    q = q0.copy()
    n = len(q)
    t, iters = 1.0, 0

    def phi(z):
        f = obj.value(z)
        return t * f - float(np.sum(np.log(z))) if np.all(z > 0) and np.isfinite(f) else np.inf

    while True:
        for _ in range(100):
            iters += 1
            g = t * obj.grad(q) - 1.0 / q
            h = t * obj.hess_diag(q) + 1.0 / q**2
            # Schur complement: H^{-1} stays well scaled as q_i -> 0
            hinv = 1.0 / h
            schur = (poly.M * hinv) @ poly.M.T
            nu = np.linalg.solve(schur, poly.b - poly.M @ q + poly.M @ (hinv * g))
            dq = hinv * (poly.M.T @ nu - g)
            decrement = float(dq @ (h * dq))
            if decrement <= 1e-14:
                break
            neg = dq < 0
            s = min(1.0, 0.99 * float(np.min(-q[neg] / dq[neg]))) if np.any(neg) else 1.0
            if decrement > 0.25:
                # damped phase; near the centre full steps converge quadratically
                f0 = phi(q)
                while s > 1e-16 and not phi(q + s * dq) <= f0 - 0.25 * s * decrement:
                    s *= 0.5
            if s <= 1e-16:
                break
            q = q + s * dq
        if n / t <= gap:
            return q, iters
        t *= 10.0


def _newton_polish(obj: _Objective, poly: _Polytope, q: np.ndarray, step_tol: float = 1e-15,
                   zero_tol: float = 1e-5):
    """Active-set Newton on the face {q_i = 0 for i in Z}, Z read off from q."""
    q = q.copy()
    n = len(q)
    zero = (q <= zero_tol) & ~obj.on
    q[zero] = 0.0
    for _ in range(60):
        free = ~zero
        for _inner in range(50):
            g = obj.grad(q)
            h = obj.hess_diag(q)
            Mf = poly.M[:, free]
            nf, m = int(free.sum()), poly.M.shape[0]
            kkt = np.zeros((nf + m, nf + m))
            kkt[:nf, :nf] = np.diag(h[free])
            kkt[:nf, nf:] = Mf.T
            kkt[nf:, :nf] = Mf
            rhs = np.concatenate([-g[free], poly.b - poly.M @ q])
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            dq = sol[:nf]
            if np.max(np.abs(dq)) <= step_tol:
                break
            # keep supp(P) coordinates strictly positive, others nonnegative
            qf = q[free]
            neg = dq < 0
            t = 1.0
            if np.any(neg):
                ratios = -qf[neg] / dq[neg]
                on_f = obj.on[free][neg]
                ratios = np.where(on_f, 0.99 * ratios, ratios)
                t = min(1.0, float(ratios.min()))
            f0 = obj.value(q)
            while t > 1e-16:
                qn = q.copy()
                qn[free] = qf + t * dq
                qn[free & ~obj.on] = np.maximum(qn[free & ~obj.on], 0.0)
                if obj.value(qn) <= f0 + 1e-14 * max(1.0, abs(f0)):
                    break
                t *= 0.5
            q = qn
            if t * np.max(np.abs(dq)) <= step_tol:
                break
        # multipliers and reduced costs for the KKT check
        g = obj.grad(q)
        nu = np.linalg.lstsq(poly.M[:, free].T, g[free], rcond=None)[0]
        reduced = g - poly.M.T @ nu
        hit = free & ~obj.on & (q <= 1e-14)
        release = zero & (reduced < -1e-10)
        if not hit.any() and not release.any():
            break
        zero = (zero | hit) & ~release
        q[zero] = 0.0
    return q


def _solve(P: FiniteDistribution, mu, spec: FDivergenceSpec, tol: float, restarts: int,
           seed: int) -> PrimalResult:
    mu = check_interior(mu, P.dim)
    pts = restricted_support(P)
    pmap = P.mass_map()
    p_full = np.array([pmap.get(tuple(x), 0.0) for x in pts.tolist()])
    obj = _Objective(p_full, spec)
    poly_exact = _Polytope(pts, mu, np.zeros(len(pts)))
    rng = np.random.default_rng(seed)
    inner = interior_point(pts, mu)
    starts = [inner] + [0.5 * inner + 0.5 * poly_exact.project(rng.dirichlet(np.ones(len(pts))))
                        for _ in range(restarts)]

    best_q, best_f, total = None, np.inf, 0
    for q0 in starts:
        q, iters = _barrier(obj, poly_exact, q0)
        total += iters
        q = _newton_polish(obj, poly_exact, q, step_tol=tol)
        q = np.maximum(q, 0.0)
        if poly_exact.residual(q) > 1e-10:
            q = poly_exact.project(q)
        f = obj.value(q)
        if f < best_f:
            best_q, best_f = q, f
    if best_q is None:
        raise AssertionError("primal problem infeasible; mu must be interior")
    Q = FiniteDistribution(pts, best_q / best_q.sum())
    return PrimalResult(max(best_f, 0.0), Q, pts, best_q, poly_exact.residual(best_q), total)


def primal_klinf_finite(P: FiniteDistribution, mu, tol: float = 1e-12, *, restarts: int = 3,
                        seed: int = 0) -> PrimalResult:
    """min KL(P, Q) over Q on the restricted support with E_Q[X] = mu."""
    return _solve(P, mu, KL, tol, restarts, seed)


def primal_fdiv_finite(P: FiniteDistribution, mu, spec: FDivergenceSpec, tol: float = 1e-12, *,
                       restarts: int = 3, seed: int = 0) -> PrimalResult:
    """min D_f(P || Q) over the same polytope."""
    return _solve(P, mu, spec, tol, restarts, seed)


def convergence_probe(P: FiniteDistribution, mu, k_range, tol: float = 1e-9):
    """Rows (k, KLinf(P K_k, mu)) followed by (None, KLinf(P, mu))."""
    from .channel import DyadicGrid, pushforward
    from .klinf_dual import klinf

    rows = []
    for k in k_range:
        Pk = pushforward(P, DyadicGrid(k, P.dim))
        rows.append((k, klinf(Pk, mu, tol).value))
    rows.append((None, klinf(P, mu, tol).value))
    return rows
