"""KLinf under a general moment constraint E_Q[g(X)] in C.

The dual is

    sup  E_P[log(gamma - <lam, g(X)>)] + 1 - gamma + inf_{c in C} <c, lam>
    s.t. gamma - <lam, g(x)> >= 0 for every x in [0,1]^K,

a concave program with a semi-infinite linear constraint. We solve it by a
log-barrier Newton method over a finite set of cut points x, adding the
exact maximizer of <lam, g(x)> whenever the current iterate violates the
full constraint, inside an adaptive Euclidean ball of radius R.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .channel import DyadicGrid
from .core import DimensionMismatch, DomainError, FiniteDistribution, as_point
from .fdiv_dual import FDualPoint

DEFAULT_TOL = 1e-7
R_START = 10.0
R_MAX = 1e4
MAX_CUT_ROUNDS = 200
COARSE_GAP = 1e-5


class UnboundedDualSuspected(RuntimeError):
    """The dual argmax keeps pinning to the truncation radius."""


# -- constraint functions -----------------------------------------------------


def _poly_max_unit(coef: np.ndarray) -> tuple[float, float]:
    """max over t in [0,1] of sum_i coef[i] t^(i+1), with its argmax."""
    cand = [0.0, 1.0]
    if len(coef) > 1:
        deriv = coef * np.arange(1, len(coef) + 1)
        nz = np.flatnonzero(deriv)
        if len(nz) > 1:
            roots = np.roots(deriv[: nz[-1] + 1][::-1])
            cand += [float(r.real) for r in roots if abs(r.imag) < 1e-12 and 0.0 < r.real < 1.0]
    vals = [float(np.polyval(np.append(coef[::-1], 0.0), t)) for t in cand]
    i = int(np.argmax(vals))
    return vals[i], cand[i]


@dataclass(frozen=True)
class ConstraintFunction:
    """g : [0,1]^K -> R^J with a sup-norm Lipschitz constant and a sup bound.

    ``support``, when present, returns the exact max over the cube of
    <lam, g(x)> together with a maximizing x.
    """

    name: str
    dim_in: int
    dim_out: int
    eval: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    lipschitz: float
    bound: float
    support: Optional[Callable[[np.ndarray], tuple[float, np.ndarray]]] = field(default=None, repr=False)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.eval(x[None, :])[0]
        return self.eval(x)

    def max_dot(self, lam: np.ndarray, level: int = 6) -> tuple[float, np.ndarray]:
        """sup_x <lam, g(x)>: exact when ``support`` is known, otherwise a
        Lipschitz upper bound from the grid V_level (argmax is the best vertex)."""
        if self.support is not None:
            return self.support(lam)
        grid = DyadicGrid(min(level, _level_cap(self.dim_in)), self.dim_in)
        v = grid.vertices()
        vals = self.eval(v) @ lam
        i = int(np.argmax(vals))
        slack = self.lipschitz * float(np.abs(lam).sum()) * grid.mesh
        return float(vals[i]) + slack, v[i]

    def check_lipschitz(self, rng: np.random.Generator, n_pairs: int = 10_000) -> bool:
        x = rng.random((n_pairs, self.dim_in))
        y = rng.random((n_pairs, self.dim_in))
        lhs = np.max(np.abs(self.eval(x) - self.eval(y)), axis=1)
        rhs = self.lipschitz * np.max(np.abs(x - y), axis=1)
        return bool(np.all(lhs <= rhs + 1e-12))

    # builtins

    @classmethod
    def identity(cls, dim: int) -> "ConstraintFunction":
        def support(lam):
            return float(np.maximum(lam, 0.0).sum()), (lam > 0).astype(float)

        return cls("identity", dim, dim, lambda x: x, 1.0, 1.0, support)

    @classmethod
    def powers(cls, dim: int, degree: int) -> "ConstraintFunction":
        """(x, x^2, ..., x^degree), each power applied componentwise."""
        if degree < 1:
            raise DomainError("powers degree must be >= 1")

        def ev(x):
            return np.hstack([x**i for i in range(1, degree + 1)])

        def support(lam):
            coef = lam.reshape(degree, dim)
            best = [_poly_max_unit(coef[:, k]) for k in range(dim)]
            return sum(b[0] for b in best), np.array([b[1] for b in best])

        return cls(f"powers:{degree}", dim, dim * degree, ev, float(degree), 1.0, support)

    @classmethod
    def norms(cls, dim: int) -> "ConstraintFunction":
        """(||x||_1, ||x||_2^2)."""

        def ev(x):
            return np.stack([x.sum(axis=1), (x**2).sum(axis=1)], axis=1)

        def support(lam):
            val, t = _poly_max_unit(np.asarray(lam, dtype=float))
            return dim * val, np.full(dim, t)

        return cls("norms", dim, 2, ev, 2.0 * dim, float(dim), support)

    @classmethod
    def affine(cls, A, b) -> "ConstraintFunction":
        """x -> A x + b."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = as_point(b, A.shape[0])

        def support(lam):
            s = A.T @ lam
            return float(lam @ b + np.maximum(s, 0.0).sum()), (s > 0).astype(float)

        lip = float(np.abs(A).sum(axis=1).max())
        bound = float(np.max(np.abs(b) + np.abs(A).sum(axis=1)))
        return cls("affine", A.shape[1], A.shape[0], lambda x: x @ A.T + b, lip, bound, support)

    @classmethod
    def from_name(cls, name: str, dim: int) -> "ConstraintFunction":
        if name == "identity":
            return cls.identity(dim)
        if name == "norms":
            return cls.norms(dim)
        if name.startswith("powers:"):
            try:
                degree = int(name.split(":", 1)[1])
            except ValueError:
                raise DomainError(f"bad powers spec {name!r}") from None
            return cls.powers(dim, degree)
        raise DomainError(f"unknown constraint function {name!r}; use identity, powers:j or norms")


def _level_cap(dim: int) -> int:
    from .channel import level_cap

    return level_cap(dim)


# -- constraint sets ------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintSet:
    """Singleton, box or polytope (vertex list) in R^J."""

    kind: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if not np.all(np.isfinite(pts)):
            raise DomainError("constraint set must be finite")
        if self.kind == "box":
            if pts.shape[0] != 2 or np.any(pts[0] > pts[1]):
                raise DomainError("box needs lo <= hi")
        elif self.kind == "singleton":
            if pts.shape[0] != 1:
                raise DomainError("singleton needs one point")
        elif self.kind != "polytope":
            raise DomainError(f"unknown set kind {self.kind!r}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def singleton(cls, c) -> "ConstraintSet":
        return cls("singleton", [as_point(c)])

    @classmethod
    def box(cls, lo, hi) -> "ConstraintSet":
        lo = as_point(lo)
        return cls("box", [lo, as_point(hi, lo.shape[0])])

    @classmethod
    def polytope(cls, vertices) -> "ConstraintSet":
        v = np.atleast_2d(np.asarray(vertices, dtype=float))
        if v.shape[0] == 0:
            raise DomainError("polytope needs at least one vertex")
        return cls("polytope", v)

    @classmethod
    def from_dict(cls, obj: dict) -> "ConstraintSet":
        if not isinstance(obj, dict) or len(obj) != 1:
            raise DomainError("constraint set must be one of {singleton|box|polytope: ...}")
        (kind, val), = obj.items()
        if kind == "singleton":
            return cls.singleton(val)
        if kind == "box":
            return cls.box(val["lo"], val["hi"])
        if kind == "polytope":
            return cls.polytope(val)
        raise DomainError(f"unknown set kind {kind!r}")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def inf_dot(self, lam) -> float:
        """inf over C of <c, lam>, exact."""
        lam = as_point(lam, self.dim)
        if self.kind == "box":
            return float(np.minimum(self.points[0] * lam, self.points[1] * lam).sum())
        return float(np.min(self.points @ lam))

    def blocks(self) -> list[np.ndarray]:
        """inf_dot(lam) = sum over blocks of min over the block's rows of <row, lam>."""
        if self.kind == "box":
            out = []
            for j in range(self.dim):
                rows = np.zeros((2, self.dim))
                rows[:, j] = self.points[:, j]
                out.append(rows)
            return out
        return [np.asarray(self.points)]

    def contains(self, y, tol: float = 1e-12) -> bool:
        y = as_point(y, self.dim)
        if self.kind == "singleton":
            return bool(np.max(np.abs(y - self.points[0])) <= tol)
        if self.kind == "box":
            return bool(np.all(y >= self.points[0] - tol) and np.all(y <= self.points[1] + tol))
        raise DomainError("membership is only implemented for singletons and boxes")

    def inflate(self, eta: float) -> "ConstraintSet":
        """C + eta [-1, 1]^J."""
        if eta < 0:
            raise DomainError("inflation must be nonnegative")
        if self.kind in ("singleton", "box"):
            lo, hi = self.points[0], self.points[-1]
            return ConstraintSet.box(lo - eta, hi + eta)
        shifts = np.array(list(itertools.product((-eta, eta), repeat=self.dim)))
        verts = (self.points[:, None, :] + shifts[None, :, :]).reshape(-1, self.dim)
        return ConstraintSet.polytope(np.unique(verts, axis=0))


# -- dual -------------------------------------------------------------------------


def _check_dims(P: FiniteDistribution, g: ConstraintFunction, C: ConstraintSet) -> None:
    if g.dim_in != P.dim:
        raise DimensionMismatch(f"g takes K={g.dim_in}, P has K={P.dim}")
    if C.dim != g.dim_out:
        raise DimensionMismatch(f"C lives in R^{C.dim}, g maps to R^{g.dim_out}")


def general_dual_objective(P: FiniteDistribution, g: ConstraintFunction, C: ConstraintSet,
                           theta: FDualPoint) -> float:
    """E_P[log(gamma - <lam, g(X)>)] + 1 - gamma + inf_C <c, lam>; -inf if some atom is not positive."""
    _check_dims(P, g, C)
    lam = as_point(theta.lam, g.dim_out)
    u = theta.gamma - g(P.atoms) @ lam
    if np.any(u <= 0.0):
        return -np.inf
    return float(P.weights @ np.log(u)) + 1.0 - theta.gamma + C.inf_dot(lam)


def certify_feasible(theta: FDualPoint, g: ConstraintFunction, level: int) -> tuple[bool, float]:
    """Grid certificate that gamma - <lam, g(x)> >= 0 on the whole cube.

    Returns (certified, margin) with margin = min over V_level of
    gamma - <lam, g(v)> minus L_g ||lam||_1 Delta; certified iff margin >= 0.
    """
    grid = DyadicGrid(level, g.dim_in)
    lam = as_point(theta.lam, g.dim_out)
    low = float(np.min(theta.gamma - g(grid.vertices()) @ lam))
    margin = low - g.lipschitz * float(np.abs(lam).sum()) * grid.mesh
    return margin >= 0.0, margin


@dataclass(frozen=True)
class GeneralResult:
    value: float
    argmax: FDualPoint
    iterations: int
    converged: bool
    radius: float
    unbounded_suspected: bool
    cuts: int


class _BarrierProblem:
    """Variables z = (lam, gamma, tau_1..tau_B); maximize

        sum_i w_i log(gamma - <lam, g_i>) + 1 - gamma + sum_b tau_b

    subject to A z <= 0 (cuts and tau_b <= <c, lam> rows) and
    ||(lam, gamma)||^2 < R^2.
    """

    def __init__(self, w, G, blocks, J):
        self.w, self.G, self.J = w, G, J
        B = len(blocks)
        self.nz = J + 1 + B
        rows = []
        for b, blk in enumerate(blocks):
            for c in blk:
                r = np.zeros(self.nz)
                r[:J] = -c
                r[J + 1 + b] = 1.0
                rows.append(r)
        self.block_rows = np.array(rows)
        self.cut_rows = np.zeros((0, self.nz))
        self.lin = np.zeros(self.nz)
        self.lin[J] = -1.0
        self.lin[J + 1:] = 1.0
        # atom rows: u_i = a_i . z
        self.atom = np.hstack([-G, np.ones((len(w), 1)), np.zeros((len(w), B))])

    def add_cut(self, gx: np.ndarray) -> None:
        r = np.zeros(self.nz)
        r[: self.J] = gx
        r[self.J] = -1.0
        self.cut_rows = np.vstack([self.cut_rows, r])

    @property
    def A(self) -> np.ndarray:
        return np.vstack([self.block_rows, self.cut_rows])

    def start(self) -> np.ndarray:
        z = np.zeros(self.nz)
        z[self.J] = 1.0
        z[self.J + 1:] = -1.0
        return z

    def objective(self, z) -> float:
        u = self.atom @ z
        if np.any(u <= 0):
            return -np.inf
        return float(self.w @ np.log(u)) + 1.0 + float(self.lin @ z)

    def solve(self, z: np.ndarray, R: float, gap: float, t: float = 1.0) -> tuple[np.ndarray, int, float]:
        A = self.A
        m = A.shape[0] + 1
        J1 = self.J + 1
        iters = 0

        def psi(z, t):
            s = -A @ z
            th = z[:J1]
            q = R * R - th @ th
            f = self.objective(z)
            if np.any(s <= 0) or q <= 0 or not np.isfinite(f):
                return -np.inf
            return t * f + float(np.sum(np.log(s))) + float(np.log(q))

        while True:
            for _ in range(200):
                iters += 1
                u = self.atom @ z
                s = -A @ z
                th = z[:J1]
                q = R * R - th @ th
                grad = t * (self.atom.T @ (self.w / u) + self.lin) - A.T @ (1.0 / s)
                grad[:J1] -= 2.0 * th / q
                H0 = t * (self.atom.T * (self.w / u**2)) @ self.atom
                H0[:J1, :J1] += 2.0 * np.eye(J1) / q + 4.0 * np.outer(th, th) / q**2
                # minus the Hessian is H0 + A^T diag(1/s^2) A; the augmented
                # form keeps the huge 1/s^2 factors of near-active rows out
                # of the matrix, so the step stays accurate as t grows
                na = A.shape[0]
                aug = np.zeros((self.nz + na, self.nz + na))
                aug[: self.nz, : self.nz] = H0
                aug[: self.nz, self.nz:] = A.T
                aug[self.nz:, : self.nz] = A
                aug[self.nz:, self.nz:] = -np.diag(s**2)
                rhs = np.concatenate([grad, np.zeros(na)])
                try:
                    step = np.linalg.solve(aug, rhs)[: self.nz]
                except np.linalg.LinAlgError:
                    step = np.linalg.lstsq(aug, rhs, rcond=None)[0][: self.nz]
                dec = float(grad @ step)
                if dec <= 1e-14:
                    break
                lo = -A @ step
                shrink = lo < 0
                a = min(1.0, 0.99 * float(np.min(s[shrink] / -lo[shrink]))) if np.any(shrink) else 1.0
                du = self.atom @ step
                neg = du < 0
                if np.any(neg):
                    a = min(a, 0.99 * float(np.min(u[neg] / -du[neg])))
                p0 = psi(z, t)
                while a > 1e-16 and not psi(z + a * step, t) >= p0 + 0.25 * a * dec:
                    a *= 0.5
                    if dec < 1e-6 and np.isfinite(psi(z + a * step, t)):
                        break
                if a <= 1e-16:
                    break
                z = z + a * step
            if m / t <= gap:
                return z, iters, t
            t *= 10.0


def klinf_general(
    P: FiniteDistribution,
    g: ConstraintFunction,
    C: ConstraintSet,
    tol: float = DEFAULT_TOL,
    *,
    radius: float = R_START,
    max_radius: float = R_MAX,
    strict: bool = False,
) -> GeneralResult:
    """inf KL(P, Q) over Q with E_Q[g(X)] in C, from the dual.

    The reported value is the dual objective at a point that is exactly
    feasible (gamma is raised to the exact max of <lam, g(x)> at the end),
    so it is always a valid lower bound. The caller is responsible for the
    interior condition int(conv g(X)) meeting C; if the argmax keeps
    pressing against the radius cap the result is flagged (or, with
    ``strict``, UnboundedDualSuspected is raised).
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    _check_dims(P, g, C)
    J = g.dim_out
    prob = _BarrierProblem(P.weights, g(P.atoms), C.blocks(), J)
    for v in itertools.product((0.0, 1.0), repeat=min(P.dim, 10)):
        prob.add_cut(g(np.array(v)))
    gap = 1e-2 * tol
    # cuts are exchanged at a coarse barrier gap first; the fine gap is
    # only paid for once the cut set has (nearly) settled
    coarse = max(gap, COARSE_GAP)
    z0 = prob.start()
    z = z0.copy()
    iters, R, converged = 0, float(radius), False
    while True:
        converged = False
        cur = coarse
        for _ in range(MAX_CUT_ROUNDS):
            z, it, _ = prob.solve(z, R, cur)
            iters += it
            lam, gamma = z[:J], z[J]
            top, xstar = g.max_dot(lam)
            if top - gamma <= 1e-12 * max(1.0, abs(gamma)):
                if cur == gap:
                    converged = True
                    break
                cur = gap
                continue
            prob.add_cut(g(xstar))
            z = _pull_inside(prob, z, z0)
        norm = float(np.linalg.norm(z[: J + 1]))
        if norm <= 0.9 * R or 2 * R > max_radius:
            break
        R *= 2.0
    pinned = norm > 0.9 * R
    if pinned and strict:
        raise UnboundedDualSuspected(f"dual argmax norm {norm:.3g} at radius cap {R:.3g}")
    lam = z[:J].copy()
    top, _ = g.max_dot(lam)
    theta = FDualPoint(lam, max(float(z[J]), top))
    value = general_dual_objective(P, g, C, theta)
    base = FDualPoint(np.zeros(J), 1.0)
    if not value >= 0.0:
        theta, value = base, 0.0
    return GeneralResult(value, theta, iters, converged, R, pinned, prob.cut_rows.shape[0])


def _pull_inside(prob: _BarrierProblem, z: np.ndarray, z0: np.ndarray) -> np.ndarray:
    """Move z toward the strictly feasible z0 until every linear row has slack."""
    A = prob.A
    s, s0 = -A @ z, -A @ z0
    bad = s <= 0.01 * s0
    if not np.any(bad):
        return z
    frac = np.min((s0[bad] - 0.01 * s0[bad]) / (s0[bad] - s[bad]))
    return z0 + frac * (z - z0)
