"""Exact Euclidean projections and a projected-gradient ascent engine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def support_gap(lam: np.ndarray, mu: np.ndarray) -> float:
    """sup_{x in [0,1]^K} lam^T (x - mu), attained at a cube corner."""
    return float(np.sum(np.maximum(lam, 0.0) * (1.0 - mu) + np.maximum(-lam, 0.0) * mu))


def project_gap_ball(v: np.ndarray, mu: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of v onto {lam : support_gap(lam, mu) <= radius}.

    The set is a ball of an asymmetric weighted l1 norm, so the projection
    is a per-coordinate soft threshold whose level is found by sorting the
    breakpoints.
    """
    if support_gap(v, mu) <= radius:
        return v.copy()
    if radius <= 0.0:
        return np.zeros_like(v)
    w = np.where(v > 0, 1.0 - mu, mu)
    a = np.abs(v)
    brk = a / w
    order = np.argsort(-brk)
    s1 = s2 = 0.0
    theta = 0.0
    for pos, j in enumerate(order):
        s1 += w[j] * a[j]
        s2 += w[j] * w[j]
        theta = (s1 - radius) / s2
        if pos + 1 == len(order) or theta >= brk[order[pos + 1]]:
            break
    return np.sign(v) * np.maximum(a - theta * w, 0.0)


def project_epigraph(lam: np.ndarray, gamma: float, floor: float):
    """Projection of (lam, gamma) onto {gamma >= sum_j max(lam_j, 0) + floor}."""
    pos = np.maximum(lam, 0.0)
    if gamma >= pos.sum() + floor:
        return lam.copy(), float(gamma)
    p = np.sort(lam[lam > 0])[::-1]
    s = 0.0
    nu = floor - gamma
    for m in range(len(p) + 1):
        nu = (s + floor - gamma) / (m + 1)
        if m == len(p) or nu >= p[m]:
            break
        s += p[m]
    nu = max(nu, 0.0)
    return lam - np.clip(lam, 0.0, nu), float(gamma + nu)


@dataclass
class AscentResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    pg_norm: float


def projected_ascent(
    value: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    project: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    *,
    max_iter: int = 2000,
    pg_tol: float = 1e-9,
    target: float | None = None,
    armijo: float = 1e-4,
) -> AscentResult:
    """Maximize a concave function over a convex set.

    Projected gradient with Barzilai-Borwein trial steps and Armijo
    backtracking along the projection arc. ``value`` may return -inf
    outside the objective's domain; such trial points are rejected.
    Stops when the projected-gradient norm ||P(x + g) - x|| drops below
    ``pg_tol`` or, if given, as soon as the value reaches ``target``.
    """
    x = project(np.asarray(x0, dtype=float))
    f = value(x)
    if not np.isfinite(f):
        raise ValueError("starting point has non-finite objective")
    g = grad(x)
    step = 1.0
    pg = float(np.linalg.norm(project(x + g) - x))
    it = 0
    while it < max_iter:
        if pg <= pg_tol or (target is not None and f >= target):
            return AscentResult(x, f, it, True, pg)
        it += 1
        t = step
        flat = 8.0 * np.finfo(float).eps * max(1.0, abs(f))
        while True:
            xn = project(x + t * g)
            d = xn - x
            if not np.any(d):
                # the step no longer moves x: precision limit reached
                return AscentResult(x, f, it, pg <= 100 * pg_tol, pg)
            fn = value(xn)
            if np.isfinite(fn) and fn >= f + armijo * float(g @ d):
                gn = grad(xn)
                break
            if np.isfinite(fn) and abs(fn - f) <= flat:
                # f is flat at working precision; judge by the projected gradient
                gn = grad(xn)
                if float(np.linalg.norm(project(xn + gn) - xn)) < pg:
                    break
            t *= 0.5
            if t < 1e-30:
                return AscentResult(x, f, it, pg <= 100 * pg_tol, pg)
        s, y = d, gn - g
        sy = float(s @ y)
        step = float(s @ s) / -sy if sy < 0 else min(2.0 * t, 1e12)
        step = min(max(step, 1e-12), 1e12)
        x, f, g = xn, fn, gn
        pg = float(np.linalg.norm(project(x + g) - x))
    done = pg <= pg_tol or (target is not None and f >= target)
    return AscentResult(x, f, it, done, pg)


def staged_ascent(
    value: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    project_at: Callable[[float], Callable[[np.ndarray], np.ndarray]],
    x0: np.ndarray,
    schedule: tuple[float, ...],
    *,
    pg_tol: float,
    max_iter: int = 2000,
    target: float | None = None,
    baseline: tuple[np.ndarray, float] | None = None,
) -> AscentResult:
    """Run ``projected_ascent`` over the shrunken sets ``project_at(eps)``.

    Each stage warm-starts from the previous one; the best iterate seen
    (or ``baseline`` if nothing beats it) is returned.
    """
    x = np.asarray(x0, dtype=float)
    best_x, best_f = (None, -np.inf) if baseline is None else (baseline[0].copy(), baseline[1])
    iters, res = 0, None
    for eps in schedule:
        res = projected_ascent(value, grad, project_at(eps), x, max_iter=max_iter, pg_tol=pg_tol, target=target)
        iters += res.iterations
        x = res.x
        if res.value > best_f:
            best_x, best_f = res.x.copy(), res.value
        if target is not None and res.value >= target:
            break
    return AscentResult(best_x, best_f, iters, res.converged, res.pg_norm)
