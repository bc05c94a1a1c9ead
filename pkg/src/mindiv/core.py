"""Finite-support distributions on the unit cube and direct divergence evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

RENORMALIZE_TOL = 1e-9


class DomainError(ValueError):
    """Input outside the domain an operation is defined on."""


class DimensionMismatch(DomainError):
    pass


class InteriorMeanRequired(DomainError):
    """The target mean must lie strictly inside the cube."""


def as_point(x, dim: int | None = None) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise DomainError(f"expected a vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {arr.shape[0]}")
    return arr


def check_interior(mu, dim: int | None = None) -> np.ndarray:
    mu = as_point(mu, dim)
    if not np.all(np.isfinite(mu)) or np.any(mu <= 0.0) or np.any(mu >= 1.0):
        raise InteriorMeanRequired(f"mean {mu.tolist()} is not in the open cube (0,1)^K")
    return mu


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """Weighted atoms in [0,1]^K, always stored in canonical form.

    Canonical form: atoms sorted lexicographically, duplicate atoms merged
    (weights summed) and zero-weight atoms dropped. Weight sums within
    ``RENORMALIZE_TOL`` of one are renormalized; anything further off raises.
    """

    atoms: np.ndarray
    weights: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[1] < 1:
            raise DomainError("atoms must be a non-empty list of K-vectors, K >= 1")
        if atoms.shape[0] != weights.shape[0]:
            raise DomainError(f"{atoms.shape[0]} atoms but {weights.shape[0]} weights")
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(weights))):
            raise DomainError("atoms and weights must be finite")
        if np.any(atoms < 0.0) or np.any(atoms > 1.0):
            raise DomainError("every atom must lie in [0,1]^K")
        if np.any(weights < 0.0):
            raise DomainError("weights must be nonnegative")
        total = float(weights.sum())
        if abs(total - 1.0) > RENORMALIZE_TOL:
            raise DomainError(f"weights sum to {total!r}, not 1")
        atoms, weights = _canonicalize(atoms, weights / total)
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "dim", atoms.shape[1])

    @classmethod
    def point_mass(cls, x) -> "FiniteDistribution":
        return cls([as_point(x)], [1.0])

    @classmethod
    def uniform(cls, atoms) -> "FiniteDistribution":
        atoms = np.asarray(atoms, dtype=float)
        n = atoms.shape[0]
        return cls(atoms, np.full(n, 1.0 / n))

    @classmethod
    def bernoulli(cls, p: float) -> "FiniteDistribution":
        return cls([[0.0], [1.0]], [1.0 - p, p])

    @classmethod
    def from_samples(cls, samples) -> "FiniteDistribution":
        """Empirical distribution of the rows of ``samples``."""
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        return cls.uniform(samples)

    def __len__(self) -> int:
        return self.atoms.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FiniteDistribution):
            return NotImplemented
        return (
            self.atoms.shape == other.atoms.shape
            and bool(np.array_equal(self.atoms, other.atoms))
            and bool(np.array_equal(self.weights, other.weights))
        )

    def allclose(self, other: "FiniteDistribution", atol: float = 1e-12) -> bool:
        return (
            self.atoms.shape == other.atoms.shape
            and bool(np.array_equal(self.atoms, other.atoms))
            and bool(np.allclose(self.weights, other.weights, rtol=0.0, atol=atol))
        )

    def mass_map(self) -> dict[tuple[float, ...], float]:
        return {tuple(a): float(w) for a, w in zip(self.atoms.tolist(), self.weights)}

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "atoms": self.atoms.tolist(),
            "weights": self.weights.tolist(),
        }


def _canonicalize(atoms: np.ndarray, weights: np.ndarray):
    keep = weights > 0.0
    atoms, weights = atoms[keep], weights[keep]
    if atoms.shape[0] == 0:
        raise DomainError("distribution has no mass")
    # lexsort uses the last key as primary
    order = np.lexsort(atoms.T[::-1])
    atoms, weights = atoms[order], weights[order]
    new_group = np.ones(atoms.shape[0], dtype=bool)
    new_group[1:] = np.any(atoms[1:] != atoms[:-1], axis=1)
    idx = np.flatnonzero(new_group)
    merged = np.add.reduceat(weights, idx)
    return np.ascontiguousarray(atoms[idx]), merged / merged.sum()


def mean(P: FiniteDistribution) -> np.ndarray:
    return P.weights @ P.atoms


def _aligned_masses(P: FiniteDistribution, Q: FiniteDistribution):
    """Masses of P and Q on the union of both supports."""
    if P.dim != Q.dim:
        raise DimensionMismatch(f"dimension {P.dim} vs {Q.dim}")
    union = sorted(set(P.mass_map()) | set(Q.mass_map()))
    pm, qm = P.mass_map(), Q.mass_map()
    p = np.array([pm.get(x, 0.0) for x in union])
    q = np.array([qm.get(x, 0.0) for x in union])
    return p, q


def kl_divergence(P: FiniteDistribution, Q: FiniteDistribution) -> float:
    """KL(P, Q) in nats; ``inf`` when P is not absolutely continuous w.r.t. Q."""
    p, q = _aligned_masses(P, Q)
    on = p > 0
    if np.any(q[on] == 0.0):
        return math.inf
    return max(float(np.sum(p[on] * np.log(p[on] / q[on]))), 0.0)


@dataclass(frozen=True)
class FDivergenceSpec:
    """The pieces of an f-divergence needed by its mean-constrained dual.

    ``f_tilde`` is the perspective w -> w f(1/w); ``phi`` is
    r -> inf_{w >= 0} (f_tilde(w) + r w), finite exactly on ``U_f``, the
    half-line starting at ``r_min`` (closed when ``r_min_closed``).
    """

    name: str
    f_at_zero: float
    f_tilde: Callable[[np.ndarray], np.ndarray]
    phi: Callable[[np.ndarray], np.ndarray]
    phi_prime: Callable[[np.ndarray], np.ndarray]
    r_min: float
    r_min_closed: bool

    def in_domain(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return r >= self.r_min if self.r_min_closed else r > self.r_min

    @property
    def margin_floor(self) -> float:
        """Smallest admissible value of gamma - sup_x lambda^T x."""
        return max(-self.f_at_zero, self.r_min)


def _masked(fn, r, ok, fill):
    r = np.asarray(r, dtype=float)
    out = np.full(r.shape, fill, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[ok] = fn(r[ok])
    return out


def _kl_ftilde(w):
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore"):
        return -np.log(w)


def _hel_ftilde(w):
    return (1.0 - np.sqrt(np.asarray(w, dtype=float))) ** 2


def _chi2_ftilde(w):
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore"):
        return w + 1.0 / w - 2.0


KL = FDivergenceSpec(
    name="kl",
    f_at_zero=0.0,
    f_tilde=_kl_ftilde,
    phi=lambda r: _masked(lambda s: 1.0 + np.log(s), r, np.asarray(r) > 0, -np.inf),
    phi_prime=lambda r: _masked(lambda s: 1.0 / s, r, np.asarray(r) > 0, np.inf),
    r_min=0.0,
    r_min_closed=False,
)

HELLINGER = FDivergenceSpec(
    name="hellinger",
    f_at_zero=1.0,
    f_tilde=_hel_ftilde,
    phi=lambda r: _masked(lambda s: s / (s + 1.0), r, np.asarray(r) > -1, -np.inf),
    phi_prime=lambda r: _masked(lambda s: 1.0 / (s + 1.0) ** 2, r, np.asarray(r) > -1, np.inf),
    r_min=-1.0,
    r_min_closed=False,
)

CHI_SQUARED = FDivergenceSpec(
    name="chi2",
    f_at_zero=1.0,
    f_tilde=_chi2_ftilde,
    phi=lambda r: _masked(lambda s: 2.0 * (np.sqrt(1.0 + s) - 1.0), r, np.asarray(r) >= -1, -np.inf),
    phi_prime=lambda r: _masked(lambda s: 1.0 / np.sqrt(1.0 + s), r, np.asarray(r) >= -1, np.inf),
    r_min=-1.0,
    r_min_closed=True,
)

SPECS = {"kl": KL, "hellinger": HELLINGER, "chi2": CHI_SQUARED}


def get_spec(name: str) -> FDivergenceSpec:
    try:
        return SPECS[name.lower()]
    except KeyError:
        raise DomainError(f"unknown divergence {name!r}; choose from {sorted(SPECS)}") from None


def f_divergence(P: FiniteDistribution, Q: FiniteDistribution, spec: FDivergenceSpec) -> float:
    """D_f(P || Q) = E_P[f_tilde(dQ_ac/dP)] + f(0) * (Q-mass off supp(P))."""
    p, q = _aligned_masses(P, Q)
    on = p > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = p[on] * spec.f_tilde(q[on] / p[on])
    value = float(np.sum(terms)) + spec.f_at_zero * float(np.sum(q[~on]))
    if math.isnan(value):
        return math.inf
    return max(value, 0.0)


# -- file format -------------------------------------------------------------


def distribution_from_dict(obj: dict) -> FiniteDistribution:
    try:
        dim = int(obj["dim"])
        atoms = obj["atoms"]
        weights = obj["weights"]
    except (KeyError, TypeError) as exc:
        raise DomainError(f"malformed distribution object: {exc}") from None
    atoms = np.asarray(atoms, dtype=float)
    if atoms.ndim != 2 or atoms.shape[1] != dim:
        raise DimensionMismatch(f"atoms do not match declared dim {dim}")
    return FiniteDistribution(atoms, weights)


def load_distribution(path: str | Path) -> FiniteDistribution:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DomainError(f"{path}: invalid JSON ({exc})") from None
    return distribution_from_dict(obj)


def dump_distribution(P: FiniteDistribution, path: str | Path) -> None:
    Path(path).write_text(json.dumps(P.to_json_dict()) + "\n", encoding="utf-8")


def parse_vector(text: str | Sequence[float] | Iterable[float]) -> np.ndarray:
    """Parse ``"0.2,0.5"`` (or a sequence) into a float vector."""
    if isinstance(text, str):
        try:
            return np.array([float(tok) for tok in text.split(",") if tok.strip()])
        except ValueError:
            raise DomainError(f"cannot parse vector {text!r}") from None
    return np.asarray(list(text), dtype=float)
