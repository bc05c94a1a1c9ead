"""Sequential tests, confidence sequences and change detection built on KLinf.

All three rest on the statistic m * KLinf(empirical, mu) compared with a
log-threshold. Exact dual solves are expensive relative to the simulation
budgets, so every driver first screens with a cheap upper bound

    KLinf(P, mu) <= (1 + b) / 2 * d^T S^{-1} d,

where d = mean(P) - mu, S = E_P[(X - mu)(X - mu)^T] and
b = max_j max(mu_j / (1 - mu_j), (1 - mu_j) / mu_j). It follows from
log(1 + u) <= u - u^2 / (2 (1 + b)) on the range u takes over the dual
domain. Only when the bound reaches the threshold is the dual solved, and
then with an early exit once its certified lower bound crosses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Union

import numpy as np

from .core import DomainError, FiniteDistribution, as_point, check_interior
from .klinf_dual import klinf

SOLVE_TOL = 1e-9
DEFAULT_WINDOW = 500
_SCREEN_SLACK = 1e-9


class Threshold(str, Enum):
    TEST_PLUS_ONE = "test_plus_one"  # K log n + log(1/alpha) + 1
    INVERSION = "inversion"  # log(n^K / alpha)


def threshold(n: int, dim: int, alpha: float, variant: Threshold) -> float:
    base = dim * math.log(n) + math.log(1.0 / alpha)
    return base + 1.0 if Threshold(variant) is Threshold.TEST_PLUS_ONE else base


@dataclass(frozen=True)
class TestConfig:
    mu0: np.ndarray
    alpha: float
    variant: Threshold = Threshold.TEST_PLUS_ONE

    __test__ = False  # not a pytest class

    def __post_init__(self):
        object.__setattr__(self, "mu0", check_interior(self.mu0))
        object.__setattr__(self, "variant", Threshold(self.variant))
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)")

    @property
    def dim(self) -> int:
        return self.mu0.shape[0]


# -- screening ---------------------------------------------------------------


def _bbar(mu: np.ndarray) -> float:
    return float(np.max(np.maximum(mu / (1.0 - mu), (1.0 - mu) / mu)))


def quadratic_upper_bound(d: np.ndarray, S: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Upper bounds on KLinf for a batch of (d, S) pairs; inf where S is singular.

    d has shape (M, K) and S shape (M, K, K).
    """
    M, K = d.shape
    c = 0.5 * (1.0 + _bbar(mu))
    if K == 1:
        s = S[:, 0, 0]
        out = np.full(M, np.inf)
        ok = s > 1e-300
        out[ok] = c * d[ok, 0] ** 2 / s[ok]
        out[(~ok) & (d[:, 0] == 0.0)] = 0.0
        return out
    out = np.full(M, np.inf)
    det = np.linalg.det(S)
    scale = np.einsum("mii->m", S) ** K
    ok = det > 1e-12 * np.maximum(scale, 1e-300)
    if np.any(ok):
        sol = np.linalg.solve(S[ok], d[ok][..., None])[..., 0]
        out[ok] = c * np.einsum("mk,mk->m", d[ok], sol)
    out[np.all(d == 0.0, axis=1)] = 0.0
    return out


def _screen(ub: np.ndarray, m: np.ndarray, thr: np.ndarray) -> np.ndarray:
    """True where m * KLinf might reach thr."""
    return m * (ub * (1.0 + _SCREEN_SLACK) + 1e-15) >= thr


def _crosses(obs: np.ndarray, mu: np.ndarray, target: float, init=None):
    """Whether KLinf(empirical of obs, mu) >= target, and the dual point."""
    P = FiniteDistribution.from_samples(obs)
    res = klinf(P, mu, SOLVE_TOL, init=init, target=target)
    return res.value >= target, res


# -- stream state and single steps ----------------------------------------------


@dataclass
class StreamState:
    """Observations consumed so far, kept as counts over distinct points."""

    dim: int
    n: int = 0
    counts: dict = field(default_factory=dict)
    total: np.ndarray = None
    last_lambda: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.total is None:
            self.total = np.zeros(self.dim)

    def push(self, x) -> None:
        x = as_point(x, self.dim)
        if np.any(x < 0.0) or np.any(x > 1.0):
            raise DomainError("observation outside [0,1]^K")
        key = tuple(x.tolist())
        self.counts[key] = self.counts.get(key, 0) + 1
        self.total = self.total + x
        self.n += 1

    @property
    def empirical(self) -> FiniteDistribution:
        if self.n == 0:
            raise DomainError("no observations yet")
        atoms = np.array(list(self.counts.keys()))
        w = np.array(list(self.counts.values()), dtype=float) / self.n
        return FiniteDistribution(atoms, w)

    @property
    def mean(self) -> np.ndarray:
        return self.total / self.n


@dataclass(frozen=True)
class StepResult:
    n: int
    statistic: float
    threshold: float
    fired: bool


def _statistic(state: StreamState, mu: np.ndarray, target: Optional[float] = None) -> float:
    if state.n == 0:
        return 0.0
    res = klinf(state.empirical, mu, SOLVE_TOL, init=state.last_lambda, target=target)
    state.last_lambda = res.argmax.lam
    return state.n * res.value


def test_step(state: StreamState, x, cfg: TestConfig) -> StepResult:
    """Process the n-th observation, n = state.n + 1.

    The statistic at step n is (n - 1) KLinf of the first n - 1
    observations, so it is computed before x is appended. Step 1 never fires.
    """
    n = state.n + 1
    thr = threshold(n, cfg.dim, cfg.alpha, cfg.variant) if n >= 2 else math.inf
    stat = _statistic(state, cfg.mu0) if n >= 2 else 0.0
    state.push(x)
    return StepResult(n, stat, thr, n >= 2 and stat >= thr)


test_step.__test__ = False


def cs_membership(state: StreamState, mu, alpha: float) -> bool:
    """Is mu in the confidence set C_n, n = state.n + 1?"""
    if state.n <= 0:
        return True
    mu = as_point(mu, state.dim)
    if np.any(mu <= 0.0) or np.any(mu >= 1.0):
        return False
    n = state.n + 1
    thr = threshold(n, state.dim, alpha, Threshold.INVERSION)
    res = klinf(state.empirical, mu, SOLVE_TOL)
    return state.n * res.value < thr


def cs_interval_1d(state: StreamState, alpha: float, tol: float = 1e-8) -> tuple[float, float]:
    """Endpoints of C_n for K = 1.

    mu -> KLinf(P, mu) is convex (the infimum of a jointly convex function
    over a convex set), so C_n is an interval containing the empirical mean
    and each endpoint is found by bisection.
    """
    if state.dim != 1:
        raise DomainError("cs_interval_1d needs K = 1")
    if state.n <= 0:
        return 0.0, 1.0
    centre = float(np.clip(state.mean[0], 1e-12, 1.0 - 1e-12))

    def inside(m):
        return cs_membership(state, [m], alpha)

    def edge(outer):
        a, b = centre, outer  # a inside, b outside or at the boundary
        while abs(b - a) > tol:
            mid = 0.5 * (a + b)
            if inside(mid):
                a = mid
            else:
                b = mid
        return a

    return edge(0.0), edge(1.0)


# -- sources ----------------------------------------------------------------------

Source = Union[FiniteDistribution, np.ndarray, Callable[[np.random.Generator, int], np.ndarray]]


def draw(source: Source, size: int, rng: Optional[np.random.Generator]) -> np.ndarray:
    """``size`` observations as a (size, K) array."""
    if isinstance(source, FiniteDistribution):
        if rng is None:
            raise DomainError("sampling needs an rng")
        idx = rng.choice(len(source), size=size, p=source.weights)
        return source.atoms[idx]
    if callable(source):
        out = np.asarray(source(rng, size), dtype=float)
        return out[:, None] if out.ndim == 1 else out
    arr = np.asarray(source, dtype=float)
    arr = arr[:, None] if arr.ndim == 1 else arr
    return arr[:size]


def _moments(obs: np.ndarray, mu: np.ndarray):
    """Prefix sums of X - mu and of (X - mu)(X - mu)^T, with a leading zero row."""
    y = obs - mu
    p1 = np.vstack([np.zeros((1, y.shape[1])), np.cumsum(y, axis=0)])
    outer = y[:, :, None] * y[:, None, :]
    p2 = np.concatenate([np.zeros((1,) + outer.shape[1:]), np.cumsum(outer, axis=0)])
    return p1, p2


@dataclass(frozen=True)
class RunResult:
    stop_time: Optional[int]
    censored: bool


def first_crossing(obs: np.ndarray, cfg: TestConfig, n_max: int) -> Optional[int]:
    """First n in 2..n_max with (n - 1) KLinf(obs[:n-1], mu0) >= threshold(n)."""
    mu = cfg.mu0
    obs = np.asarray(obs, dtype=float)[: n_max - 1]
    if obs.shape[0] == 0:
        return None
    p1, p2 = _moments(obs, mu)
    m = np.arange(1, obs.shape[0] + 1, dtype=float)  # m = n - 1
    ub = quadratic_upper_bound(p1[1:] / m[:, None], p2[1:] / m[:, None, None], mu)
    n = m + 1
    thr = cfg.dim * np.log(n) + math.log(1.0 / cfg.alpha)
    if cfg.variant is Threshold.TEST_PLUS_ONE:
        thr = thr + 1.0
    init = None
    for i in np.flatnonzero(_screen(ub, m, thr)):
        hit, res = _crosses(obs[: i + 1], mu, thr[i] / m[i], init)
        init = res.argmax.lam
        if hit:
            return int(n[i])
    return None


def run_sequential_test(source: Source, cfg: TestConfig, n_max: int,
                        rng: Optional[np.random.Generator] = None) -> RunResult:
    if n_max < 2:
        raise DomainError("n_max must be >= 2")
    obs = draw(source, n_max - 1, rng)
    if obs.shape[1] != cfg.dim:
        raise DomainError(f"observations have K={obs.shape[1]}, mu0 has K={cfg.dim}")
    stop = first_crossing(obs, cfg, n_max)
    return RunResult(stop, stop is None)


# -- change detection ---------------------------------------------------------------


@dataclass
class DetectorState:
    """Every suffix k..n of the stream runs its own power-one test.

    Suffix statistics are recomputed from prefix moments (for screening) and
    from the stored observations (for exact solves), so only the raw stream
    and per-suffix warm starts are kept. With ``window`` set, only the
    ``window`` most recent suffixes are examined.
    """

    cfg: TestConfig
    window: Optional[int] = None
    obs: list = field(default_factory=list)
    fired_at: Optional[int] = None
    fired_suffix: Optional[int] = None
    warm: dict = field(default_factory=dict)
    fired_count: int = 0

    def __post_init__(self):
        if self.window is not None and self.window < 1:
            raise DomainError("window must be >= 1")
        K = self.cfg.dim
        self._p1 = [np.zeros(K)]
        self._p2 = [np.zeros((K, K))]

    @property
    def n(self) -> int:
        return len(self.obs)

    @property
    def e_value(self) -> float:
        """M_n: (1/alpha) times the number of suffix tests that have fired."""
        return self.fired_count / self.cfg.alpha


def detector_step(det: DetectorState, x) -> tuple[bool, Optional[int]]:
    """Append x and check every active suffix; returns (fired, suffix start)."""
    cfg = det.cfg
    x = as_point(x, cfg.dim)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainError("observation outside [0,1]^K")
    det.obs.append(x)
    y = x - cfg.mu0
    det._p1.append(det._p1[-1] + y)
    det._p2.append(det._p2[-1] + np.outer(y, y))
    if det.fired_at is not None:
        return True, det.fired_suffix
    n = det.n
    k0 = 1 if det.window is None else max(1, n - det.window + 1)
    ks = np.arange(k0, n + 1)
    p1 = np.asarray(det._p1)
    p2 = np.asarray(det._p2)
    m = (n - ks + 1).astype(float)
    d = (p1[n] - p1[ks - 1]) / m[:, None]
    S = (p2[n] - p2[ks - 1]) / m[:, None, None]
    ub = quadratic_upper_bound(d, S, cfg.mu0)
    thr = cfg.dim * np.log(m) + math.log(1.0 / cfg.alpha)
    cand = np.flatnonzero(_screen(ub, m, thr))
    # most promising suffixes first; any certified crossing ends the search
    cand = cand[np.argsort(-(m[cand] * ub[cand] - thr[cand]))]
    obs = np.asarray(det.obs)
    for i in cand:
        k = int(ks[i])
        hit, res = _crosses(obs[k - 1:], cfg.mu0, thr[i] / m[i], det.warm.get(k))
        det.warm[k] = res.argmax.lam
        if hit:
            det.fired_at, det.fired_suffix = n, k
            det.fired_count += 1
            return True, k
    if det.window is not None:
        for k in [k for k in det.warm if k < k0]:
            del det.warm[k]
    return False, None


def suffix_stopping_times(obs: np.ndarray, cfg: TestConfig) -> np.ndarray:
    """tau^(k) for every start k (0 where the suffix never fires).

    Suffix k's test fires at the first n >= k with
    m KLinf(obs[k..n], mu0) >= log(m^K / alpha), m = n - k + 1.
    """
    obs = np.asarray(obs, dtype=float)
    N = obs.shape[0]
    out = np.zeros(N, dtype=int)
    for k in range(1, N + 1):
        tail = obs[k - 1:]
        p1, p2 = _moments(tail, cfg.mu0)
        m = np.arange(1, tail.shape[0] + 1, dtype=float)
        ub = quadratic_upper_bound(p1[1:] / m[:, None], p2[1:] / m[:, None, None], cfg.mu0)
        thr = cfg.dim * np.log(m) + math.log(1.0 / cfg.alpha)
        for i in np.flatnonzero(_screen(ub, m, thr)):
            if _crosses(tail[: i + 1], cfg.mu0, thr[i] / m[i])[0]:
                out[k - 1] = k + i
                break
    return out


def e_detector_path(obs: np.ndarray, cfg: TestConfig) -> np.ndarray:
    """M_n = sum_k (1/alpha) 1{tau^(k) <= n} for n = 1..N."""
    tau = suffix_stopping_times(obs, cfg)
    N = len(tau)
    fired = np.zeros(N + 1)
    for t in tau[tau > 0]:
        fired[t] += 1.0
    return np.cumsum(fired)[1:] / cfg.alpha


def run_detector(obs: Iterable, cfg: TestConfig, window: Optional[int] = None) -> Optional[int]:
    det = DetectorState(cfg, window)
    for x in obs:
        fired, _ = detector_step(det, x)
        if fired:
            return det.fired_at
    return None


# -- Monte Carlo drivers --------------------------------------------------------------


def replicate_rng(seed: int, r: int) -> np.random.Generator:
    """Stream (seed, r): independent per replicate, reproducible in any order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))


def simulate_test(dist: FiniteDistribution, cfg: TestConfig, n_max: int, replicates: int,
                  seed: int) -> list[dict]:
    rows = []
    for r in range(replicates):
        res = run_sequential_test(dist, cfg, n_max, replicate_rng(seed, r))
        rows.append({"replicate": r, "seed": seed, "stop_time": res.stop_time, "censored": res.censored})
    return rows


def simulate_cs(dist: FiniteDistribution, alpha: float, n_max: int, replicates: int,
                seed: int) -> list[dict]:
    """Any-time coverage of the true mean over horizon n_max.

    The true mean leaves C_n exactly when the inversion-threshold test at
    that mean fires, so non-coverage is a first-crossing event.
    """
    from .core import mean

    cfg = TestConfig(mean(dist), alpha, Threshold.INVERSION)
    rows = []
    for r in range(replicates):
        res = run_sequential_test(dist, cfg, n_max, replicate_rng(seed, r))
        rows.append({"replicate": r, "seed": seed, "stop_time": res.stop_time, "censored": res.censored,
                     "coverage_violated": not res.censored})
    return rows


def simulate_cd(null: FiniteDistribution, alt: Optional[FiniteDistribution], change_at: Optional[int],
                alpha: float, n_max: int, replicates: int, seed: int,
                window: Optional[int] = DEFAULT_WINDOW) -> list[dict]:
    """Run the detector on streams that switch from ``null`` to ``alt``.

    Observations 1..change_at come from null, later ones from alt. Without a
    change the stop time is the first alarm (run length). With a change, a
    pre-change alarm restarts the detector on the remaining stream and the
    delay is the first post-change alarm time minus change_at.
    """
    from .core import mean

    cfg = TestConfig(mean(null), alpha, Threshold.INVERSION)
    rows = []
    for r in range(replicates):
        rng = replicate_rng(seed, r)
        if change_at is None or alt is None:
            obs = draw(null, n_max, rng)
        else:
            c = min(change_at, n_max)
            obs = np.vstack([draw(null, c, rng), draw(alt, n_max - c, rng)])
        row = {"replicate": r, "seed": seed, "stop_time": None, "censored": True}
        if change_at is not None:
            row["delay"] = None
        start, false_alarms = 0, 0
        while start < n_max:
            hit = run_detector(obs[start:], cfg, window)
            if hit is None:
                break
            t = start + hit
            if change_at is not None and t <= change_at:
                false_alarms += 1
                start = t
                continue
            row["stop_time"], row["censored"] = t, False
            if change_at is not None:
                row["delay"] = t - change_at
            break
        row["false_alarms"] = false_alarms
        rows.append(row)
    return rows


def summarize(rows: list[dict], n_max: int) -> dict:
    """Means, quantiles and Monte Carlo standard errors of a simulation."""
    R = len(rows)
    stops = np.array([row["stop_time"] if not row["censored"] else n_max for row in rows], dtype=float)
    fired = np.array([not row["censored"] for row in rows], dtype=float)
    out = {
        "replicates": R,
        "fire_fraction": float(fired.mean()) if R else 0.0,
        "fire_fraction_se": float(np.sqrt(fired.mean() * (1 - fired.mean()) / R)) if R else 0.0,
        "censored_fraction": float(1.0 - fired.mean()) if R else 0.0,
        "mean_stop_censored_at_horizon": float(stops.mean()) if R else None,
        "mean_stop_se": float(stops.std(ddof=1) / np.sqrt(R)) if R > 1 else None,
        "stop_quantiles": {str(q): float(np.quantile(stops, q)) for q in (0.1, 0.5, 0.9)} if R else {},
    }
    if R and "delay" in rows[0]:
        delays = np.array([row["delay"] for row in rows if row["delay"] is not None], dtype=float)
        out["detected"] = int(len(delays))
        out["mean_delay"] = float(delays.mean()) if len(delays) else None
        out["mean_delay_se"] = float(delays.std(ddof=1) / np.sqrt(len(delays))) if len(delays) > 1 else None
        out["false_alarms"] = int(sum(row.get("false_alarms", 0) for row in rows))
    if R and "coverage_violated" in rows[0]:
        out["noncoverage_fraction"] = out["fire_fraction"]
    return out
