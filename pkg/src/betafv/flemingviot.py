"""Beta Fleming-Viot process with neutral mutation, by two independent routes.

Route A normalises the interactive-immigration MBI and runs it on the clock
``S(t) = κ_S ∫_0^t X_s(1)^(1−α) ds`` with ``κ_S = α(α−1)Γ(α)``.  Route B
solves the jump equation

    Y_t(v) = v + Σ y [1(u ≤ Y_{s−}(v)) − Y_{s−}(v)] + θ ∫ (v − Y_s(v)) ds

directly, with jumps ``y ≥ δ_y`` from ``y^(−2) Λ(dy)``,
``Λ = Beta(2−α, α)``.

Mutation rate under the time change: with ``g(x) = θ' x^(2−α)`` and uniform
immigration the drift of ``X(v)/X(1)`` is ``θ' X^(1−α) (v − Y)``, which on
the clock ``S`` becomes ``(θ'/κ_S)(v − Y)``.  The resampling part comes out
exactly as ``Beta(2−α, α)`` because ``c_α / κ_S = 1/(Γ(2−α)Γ(α))``.  So an
FV process with mutation rate ``θ`` needs ``θ' = κ_S θ``; this is the default
(``mutation_scale="kappa_s"``).  ``mutation_scale="literal"`` uses ``θ' = θ``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np
from scipy import stats
from scipy.special import gamma as gamma_fn

from .csbp import JumpPath, flow_inv_power_integral, flow_inv_power_inverse
from .excursion import ExcursionTruncation, TypeLaw
from .mbi import (ImmigrationG, kappa_s, simulate_mbi, simulate_type_bins,
                  snapshot_measure)
from .rng import RngStream

__all__ = [
    "HorizonExhausted",
    "TimeChange",
    "build_time_change",
    "invert_time_change",
    "ProbabilityAtomicMeasure",
    "FvSample",
    "fv_from_mbi",
    "beta_lambda_density",
    "JumpTable",
    "jump_table",
    "fv_direct",
    "CrossValidation",
    "cross_validate",
]


class HorizonExhausted(RuntimeError):
    """A requested Fleming-Viot time lies beyond the simulated range of ``S``."""


# --- time change --------------------------------------------------------------------

@dataclass
class TimeChange:
    """``S`` on a piecewise path; exact per interval.

    On interval ``i`` the mass follows ``m' = −κ_i m + c m^(2−α)``, so
    ``z = m^(α−1)`` solves a linear ODE and ``∫ m^(1−α)`` is closed form.
    """
    alpha: float
    times: np.ndarray
    z0: np.ndarray         # (mass right after breakpoint)^(α−1)
    a: np.ndarray          # (α−1) κ_i
    b: np.ndarray          # (α−1) c
    s_values: np.ndarray   # S at each breakpoint
    horizon: float
    s_end: float
    kappa_s: float = field(init=False)

    def __post_init__(self):
        self.kappa_s = kappa_s(self.alpha)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.horizon * (1 + 1e-12)):
            raise ValueError("t outside the path domain")
        i = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, None)
        out = np.array([self.s_values[k] + self.kappa_s * flow_inv_power_integral(
            self.z0[k], self.a[k], self.b[k], float(tt - self.times[k]))
            for k, tt in zip(np.atleast_1d(i), np.atleast_1d(t))])
        return out.reshape(t.shape)[()] if t.ndim == 0 else out.reshape(t.shape)


def build_time_change(path: JumpPath, alpha: float | None = None) -> TimeChange:
    """``S`` for a strictly positive mass path, integrated exactly between events."""
    alpha = path.alpha if alpha is None else alpha
    beta = alpha - 1.0
    stop = path.horizon
    if path.extinction_time is not None:
        stop = min(stop, path.extinction_time)
    keep = path.times < stop
    times = path.times[keep]
    vals = path.values[keep]
    if np.any(vals <= 0):
        raise ValueError("mass path must be strictly positive on its domain")
    z0 = vals ** beta
    a = beta * path.kappa[keep]
    b = np.full(times.size, beta * path.growth)
    ends = np.append(times[1:], stop)
    ks = kappa_s(alpha)
    # mass just before each next event must stay positive too
    pieces = np.array([ks * flow_inv_power_integral(z0[k], a[k], b[k], ends[k] - times[k])
                       for k in range(times.size)])
    s_values = np.concatenate([[0.0], np.cumsum(pieces)[:-1]])
    return TimeChange(alpha, times, z0, a, b, s_values, float(stop),
                      float(s_values[-1] + pieces[-1]))


def invert_time_change(tc: TimeChange, s: float) -> float:
    """``S^{-1}(s)``; raises :class:`HorizonExhausted` past the simulated range."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    if s > tc.s_end:
        raise HorizonExhausted(f"S only reaches {tc.s_end:.6g} < {s}")
    k = max(int(np.searchsorted(tc.s_values, s, side="right")) - 1, 0)
    dt = flow_inv_power_inverse(tc.z0[k], tc.a[k], tc.b[k],
                                (s - tc.s_values[k]) / tc.kappa_s)
    return float(tc.times[k] + dt)


# --- outputs ------------------------------------------------------------------------

@dataclass
class ProbabilityAtomicMeasure:
    """Atomic probability measure on ``[0, 1]`` with distinct locations."""
    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if w.size == 0 or np.any(w <= 0):
            raise ValueError("weights must be positive")
        uniq, inv = np.unique(loc, return_inverse=True)
        merged = np.bincount(inv, weights=w)
        self.locations = uniq
        self.weights = merged / merged.sum()

    def cdf(self, v):
        csum = np.concatenate([[0.0], np.cumsum(self.weights)])
        return csum[np.searchsorted(self.locations, np.asarray(v, float), side="right")]

    def __len__(self):
        return self.locations.size


@dataclass
class FvSample:
    """``Y_t(v)`` on a grid of Fleming-Viot times and types."""
    times: np.ndarray
    v_grid: np.ndarray
    values: np.ndarray                      # shape (len(times), len(v_grid))
    measures: list | None = None
    real_times: np.ndarray | None = None    # S^{-1}(t) for the MBI route
    meta: dict = field(default_factory=dict)


def _check_grid(v_grid):
    v = np.asarray(v_grid, dtype=float)
    if v.size == 0 or np.any(np.diff(v) <= 0) or v[0] <= 0 or v[-1] > 1:
        raise ValueError("v_grid must be increasing in (0, 1]")
    return v


def fv_from_mbi(rng: RngStream, theta: float, alpha: float, fv_times, *,
                v_grid=(0.25, 0.5, 0.75, 1.0), method: str = "bins",
                mutation_scale: str = "kappa_s", trunc: ExcursionTruncation | None = None,
                horizon: float = math.inf, rel_delta: float = 0.01) -> FvSample:
    """Fleming-Viot values from the time-changed, normalised MBI with ``F = I = Uniform``.

    ``method="bins"`` simulates the type-interval masses cut at ``v_grid``
    and lands on each FV time exactly.  ``method="atoms"`` runs the excursion
    construction (``trunc`` by age, default ``δ = 0.05``) once per target, stopping
    at ``S = t``, and also returns the atomic measures.  A target beyond the
    simulated range of ``S`` raises :class:`HorizonExhausted`; nothing is
    extrapolated.
    """
    if theta < 0 or not 1.0 < alpha < 2.0:
        raise ValueError("need theta >= 0 and alpha in (1, 2)")
    if mutation_scale not in ("kappa_s", "literal"):
        raise ValueError("mutation_scale is 'kappa_s' or 'literal'")
    times = np.atleast_1d(np.asarray(fv_times, dtype=float))
    if np.any(times <= 0) or np.any(np.diff(times) < 0):
        raise ValueError("fv_times must be positive and sorted")
    v = _check_grid(v_grid)
    theta_mbi = theta * kappa_s(alpha) if mutation_scale == "kappa_s" else theta
    if method == "bins":
        grid = v if v[-1] == 1.0 else np.append(v, 1.0)
        res = simulate_type_bins(rng, theta_mbi, alpha, horizon, v_grid=grid,
                                 fv_times=times, rel_delta=rel_delta, absorb=1e-280)
        if np.any(np.isnan(res.real_times)):
            raise HorizonExhausted(f"S only reaches {res.time_change_total:.6g}")
        vals = res.cumulative[:, :v.size]
        return FvSample(times, v, vals, real_times=res.real_times,
                        meta={"method": "bins", "theta_mbi": theta_mbi,
                              "n_events": res.n_events})
    if method != "atoms":
        raise ValueError(f"unknown method {method!r}")
    trunc = trunc or ExcursionTruncation("by_age", 0.05)
    g = ImmigrationG.power(theta_mbi, alpha)
    key = int(rng.uint64())
    h = 1e6 if not math.isfinite(horizon) else horizon
    measures, vals, real = [], [], []
    for t in times:
        st = simulate_mbi(rng, g, alpha, h, trunc, F=TypeLaw(), I=TypeLaw(), key=key,
                          s_stop=float(t))
        if st.time_change_total < t * (1 - 1e-12):
            raise HorizonExhausted(f"S only reaches {st.time_change_total:.6g} < {t}")
        if st.t_stop < st.delta_age:
            raise HorizonExhausted("requested time falls in the entrance window [0, δ)")
        snap = snapshot_measure(st, st.t_stop)
        if len(snap) == 0:
            raise HorizonExhausted("no visible mass at the requested time")
        pm = ProbabilityAtomicMeasure(snap.locations, snap.masses)
        measures.append(pm)
        vals.append(pm.cdf(v))
        real.append(st.t_stop)
    return FvSample(times, v, np.array(vals), measures=measures, real_times=np.array(real),
                    meta={"method": "atoms", "theta_mbi": theta_mbi, "key": key})


# --- direct jump equation -------------------------------------------------------------

def beta_lambda_density(y, alpha):
    """Density of ``y^(−2) Λ(dy)`` for ``Λ = Beta(2−α, α)``."""
    y = np.asarray(y, dtype=float)
    ca = 1.0 / (gamma_fn(2.0 - alpha) * gamma_fn(alpha))
    return ca * y ** (-1.0 - alpha) * (1.0 - y) ** (alpha - 1.0)


@dataclass(frozen=True)
class JumpTable:
    """Inverse-CDF table for jump sizes ``y ∈ [δ_y, 1]``.

    ``cdf[k]`` is the rate of jumps in ``[δ_y, y_k]``; inside a cell the
    density is treated as a power law fitted to both ends, then rescaled so
    cell masses are exact.
    """
    alpha: float
    delta_y: float
    log_y: np.ndarray
    cdf: np.ndarray
    power: np.ndarray
    rate: float
    dropped_variance: float


def _lower_antideriv(y, alpha, n_terms=80):
    """``∫ y^(−1−α) (1−y)^(α−1) dy`` up to a constant, for ``y ≤ 1/2``."""
    k = np.arange(n_terms)
    # coefficients of (1−y)^(α−1) = Σ c_k y^k
    c = np.concatenate([[1.0], np.cumprod((k[1:] - alpha) / k[1:])])
    y = np.asarray(y, dtype=float)[..., None]
    return np.sum(c * y ** (k - alpha) / (k - alpha), axis=-1)


def _upper_tail(w, alpha, n_terms=80):
    """``∫_{1−w}^1 y^(−1−α) (1−y)^(α−1) dy`` for ``w ≤ 1/2``."""
    k = np.arange(n_terms)
    # (1−w)^(−1−α) = Σ d_k w^k with d_k = (1+α)_k / k!
    d = np.concatenate([[1.0], np.cumprod((alpha + k[1:]) / k[1:])])
    w = np.asarray(w, dtype=float)[..., None]
    return np.sum(d * w ** (alpha + k) / (alpha + k), axis=-1)


@lru_cache(maxsize=16)
def jump_table(alpha: float, delta_y: float, n_cells: int = 4096) -> JumpTable:
    """Precompute the restricted jump law; ``rate`` is ``∫_{δ_y}^1 y^(−2) Λ(dy)``.

    Both halves of ``[δ_y, 1]`` have convergent power series (ratio at most
    1/2), so the CDF at the grid points is exact to rounding.
    """
    if not 0 < delta_y < 0.5:
        raise ValueError("delta_y must lie in (0, 1/2)")
    ca = 1.0 / (gamma_fn(2.0 - alpha) * gamma_fn(alpha))
    n_lo = n_cells // 2
    lo = np.exp(np.linspace(math.log(delta_y), math.log(0.5), n_lo + 1))
    w = 0.5 * np.exp(np.linspace(0.0, math.log(2e-3), n_cells - n_lo + 1))[1:]
    ys = np.concatenate([lo, 1.0 - w, [1.0]])
    base = _lower_antideriv(delta_y, alpha)
    half = _lower_antideriv(0.5, alpha) - base
    cdf = np.concatenate([
        _lower_antideriv(lo, alpha) - base,
        half + _upper_tail(0.5, alpha) - _upper_tail(w, alpha),
        [half + _upper_tail(0.5, alpha)],
    ]) * ca
    cdf[0] = 0.0
    dens = beta_lambda_density(ys[:-1], alpha)
    dens = np.append(dens, dens[-1] * 1e-3)
    power = np.log(dens[1:] / dens[:-1]) / np.log(ys[1:] / ys[:-1])
    k = np.arange(80)
    c = np.concatenate([[1.0], np.cumprod((k[1:] - alpha) / k[1:])])
    # Λ([0, δ_y]) = C_α ∫_0^δ y^(1−α) (1−y)^(α−1) dy
    dropped = ca * float(np.sum(c * delta_y ** (k + 2 - alpha) / (k + 2 - alpha)))
    return JumpTable(alpha, delta_y, np.log(ys), cdf, power, float(cdf[-1]), dropped)


@numba.njit(cache=True)
def _sample_jump(u, log_y, cdf, power, alpha):
    target = u * cdf[-1]
    k = np.searchsorted(cdf, target, side="right") - 1
    k = min(max(k, 0), cdf.size - 2)
    y0 = math.exp(log_y[k])
    y1 = math.exp(log_y[k + 1])
    if k == cdf.size - 2:
        # last cell touches y = 1, where the mass above 1 − w grows like w^α
        frac = (cdf[-1] - target) / (cdf[-1] - cdf[k])
        return 1.0 - (1.0 - y0) * frac ** (1.0 / alpha)
    width = cdf[k + 1] - cdf[k]
    frac = (target - cdf[k]) / width if width > 0 else 0.5
    p1 = power[k] + 1.0
    if abs(p1) < 1e-12:
        y = y0 * math.exp(frac * (log_y[k + 1] - log_y[k]))
    else:
        a0 = y0 ** p1
        y = (a0 + frac * (y1 ** p1 - a0)) ** (1.0 / p1)
    return min(max(y, y0), y1)


@numba.njit(cache=True)
def _fv_direct_kernel(gen, theta, alpha, v, targets, log_y, cdf, power, rate):
    nv = v.size
    Y = v.copy()
    out = np.empty((targets.size, nv))
    t = 0.0
    k = 0
    n_ev = 0
    while k < targets.size:
        dt = gen.standard_exponential() / rate
        while k < targets.size and t + dt > targets[k]:
            e = math.exp(-theta * (targets[k] - t))
            for j in range(nv):
                out[k, j] = v[j] + (Y[j] - v[j]) * e
            k += 1
        if k == targets.size:
            break
        e = math.exp(-theta * dt)
        for j in range(nv):
            Y[j] = v[j] + (Y[j] - v[j]) * e
        t += dt
        y = _sample_jump(gen.random(), log_y, cdf, power, alpha)
        u = gen.random()
        for j in range(nv):
            Y[j] += y * ((1.0 if u <= Y[j] else 0.0) - Y[j])
        n_ev += 1
    return out, n_ev


def fv_direct(rng: RngStream, theta: float, alpha: float, fv_times, *,
              delta_y: float = 1e-4, v_grid=(0.25, 0.5, 0.75, 1.0)) -> FvSample:
    """Event-driven solution of the jump equation from ``Y_0(v) = v``.

    Jumps below ``δ_y`` are dropped; the bracket has zero conditional mean so
    no drift correction is owed.  The variance lost per unit time,
    ``Λ([0, δ_y])``, is reported in ``meta["dropped_variance"]``.
    Between jumps the mutation flow ``Y → v + (Y − v) e^(−θ Δ)`` is exact.
    """
    if theta < 0 or not 1.0 < alpha < 2.0:
        raise ValueError("need theta >= 0 and alpha in (1, 2)")
    times = np.atleast_1d(np.asarray(fv_times, dtype=float))
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("fv_times must be nonnegative and sorted")
    v = _check_grid(v_grid)
    tab = jump_table(float(alpha), float(delta_y))
    vals, n_ev = _fv_direct_kernel(rng.generator, float(theta), float(alpha), v, times,
                                   tab.log_y, tab.cdf, tab.power, tab.rate)
    return FvSample(times, v, vals, meta={"method": "direct", "n_events": int(n_ev),
                                          "rate": tab.rate,
                                          "dropped_variance": tab.dropped_variance})


# --- cross validation -----------------------------------------------------------------

@dataclass
class CrossValidation:
    ks_statistic: float
    p_value: float
    mean_mbi: float
    mean_direct: float
    var_mbi: float
    var_direct: float
    mean_gap_se: float
    samples_mbi: np.ndarray = field(repr=False)
    samples_direct: np.ndarray = field(repr=False)

    @property
    def means_agree(self) -> bool:
        return abs(self.mean_mbi - self.mean_direct) <= 3 * self.mean_gap_se


def cross_validate(rng: RngStream, theta: float, alpha: float, t: float, v: float,
                   n_reps: int, *, delta_y: float = 1e-4, method: str = "bins",
                   rel_delta: float = 0.01) -> CrossValidation:
    """Two-sample KS and moment comparison of ``Y_t(v)`` from both routes."""
    a = np.empty(n_reps)
    b = np.empty(n_reps)
    grid = (v, 1.0) if v < 1.0 else (1.0,)
    for r in range(n_reps):
        a[r] = fv_from_mbi(rng.child(2 * r), theta, alpha, [t], v_grid=grid, method=method,
                           rel_delta=rel_delta).values[0, 0]
        b[r] = fv_direct(rng.child(2 * r + 1), theta, alpha, [t], delta_y=delta_y,
                         v_grid=grid).values[0, 0]
    ks = stats.ks_2samp(a, b)
    se = math.sqrt(a.var(ddof=1) / n_reps + b.var(ddof=1) / n_reps)
    return CrossValidation(float(ks.statistic), float(ks.pvalue), float(a.mean()),
                           float(b.mean()), float(a.var(ddof=1)), float(b.var(ddof=1)), se,
                           a, b)
