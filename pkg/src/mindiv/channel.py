"""Dyadic grids and the mean-preserving stochastic-rounding channel."""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Sequence

import numpy as np

from .core import DomainError, FiniteDistribution, as_point

# vertex counts grow as (2^k + 1)^K
LEVEL_CAPS = {1: 20, 2: 10, 3: 6}
_MAX_VERTICES = 300_000


def level_cap(dim: int) -> int:
    if dim in LEVEL_CAPS:
        return LEVEL_CAPS[dim]
    k = 1
    while (2 ** (k + 1) + 1) ** dim <= _MAX_VERTICES:
        k += 1
    return k


@dataclass(frozen=True)
class DyadicGrid:
    level: int
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise DomainError("grid dimension must be >= 1")
        if self.level < 1:
            raise DomainError("grid level must be >= 1")
        cap = level_cap(self.dim)
        if self.level > cap:
            raise DomainError(f"level {self.level} exceeds cap {cap} for K={self.dim}")

    @property
    def mesh(self) -> float:
        return math.ldexp(1.0, -self.level)

    @property
    def cells_per_side(self) -> int:
        return 1 << self.level

    @property
    def n_vertices(self) -> int:
        return (self.cells_per_side + 1) ** self.dim

    def vertices(self) -> np.ndarray:
        """All of V_k as an array of shape (n_vertices, K)."""
        side = np.arange(self.cells_per_side + 1) * self.mesh
        mesh = np.meshgrid(*([side] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def _cell_index(xj, level: int) -> int:
    n = 1 << level
    return min(math.floor(xj * n), n - 1)


def cell_min_vertex(x, grid: DyadicGrid) -> np.ndarray:
    """Minimal corner a(x) of the cell containing x; the last cell is closed."""
    x = as_point(x, grid.dim)
    return np.array([_cell_index(float(xj), grid.level) for xj in x]) * grid.mesh


def _kernel_masses(x: Sequence[Real], level: int) -> list[tuple[tuple[int, ...], Real]]:
    """Kernel row of x as (integer vertex index, probability) pairs.

    Works with floats or Fractions; with dyadic-rational Fractions the
    result is exact.
    """
    n = 1 << level
    base, frac = [], []
    for xj in x:
        i = _cell_index(xj, level)
        base.append(i)
        frac.append(xj * n - i)
    out = []
    for sel in itertools.product((0, 1), repeat=len(base)):
        w = 1
        for s, t in zip(sel, frac):
            w = w * (t if s else 1 - t)
        if w != 0:
            out.append((tuple(b + s for b, s in zip(base, sel)), w))
    return out


def pushforward_masses(atoms, weights, level: int) -> dict[tuple[int, ...], Real]:
    """Mixture of kernel rows keyed by integer grid coordinates."""
    acc: dict[tuple[int, ...], Real] = defaultdict(int)
    for a, w in zip(atoms, weights):
        for idx, m in _kernel_masses(a, level):
            acc[idx] += w * m
    return dict(acc)


def _from_masses(masses: dict, grid: DyadicGrid) -> FiniteDistribution:
    idx = np.array(list(masses.keys()), dtype=float)
    w = np.array([float(m) for m in masses.values()])
    return FiniteDistribution(idx * grid.mesh, w)


def kernel_distribution(x, grid: DyadicGrid) -> FiniteDistribution:
    x = as_point(x, grid.dim)
    _check_unit(x)
    return _from_masses(dict(_kernel_masses(x.tolist(), grid.level)), grid)


def pushforward(P: FiniteDistribution, grid: DyadicGrid) -> FiniteDistribution:
    """P K_k: each atom is stochastically rounded to its cell's vertices."""
    if P.dim != grid.dim:
        raise DomainError(f"distribution has K={P.dim}, grid has K={grid.dim}")
    masses = pushforward_masses(P.atoms.tolist(), P.weights.tolist(), grid.level)
    return _from_masses(masses, grid)


def pushforward_exact(atoms, weights, level: int) -> dict[tuple[Fraction, ...], Fraction]:
    """Rational-arithmetic pushforward, keyed by vertex coordinates."""
    atoms = [[Fraction(c) for c in a] for a in atoms]
    weights = [Fraction(w) for w in weights]
    mesh = Fraction(1, 1 << level)
    masses = pushforward_masses(atoms, weights, level)
    return {tuple(i * mesh for i in idx): m for idx, m in masses.items()}


def sample_channel(x, grid: DyadicGrid, rng: np.random.Generator) -> np.ndarray:
    """One draw from the kernel at x (or one per row if x is 2-D)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != grid.dim:
        raise DomainError(f"point has K={x.shape[-1]}, grid has K={grid.dim}")
    _check_unit(x)
    n = grid.cells_per_side
    base = np.minimum(np.floor(x * n), n - 1)
    t = x * n - base
    bits = rng.random(x.shape) < t
    return (base + bits) * grid.mesh


def _check_unit(x: np.ndarray) -> None:
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainError("point outside [0,1]^K")
