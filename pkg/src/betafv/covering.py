"""Poisson covering of the half-line by shadows ``[s, s + h)``.

A Poisson set of points ``(s, h)`` with intensity ``ds ⊗ Π'(dh)`` casts
shadows ``[s, s + h)``.  Shepp's criterion says the half-line is covered
almost surely iff

    ∫_0^1 exp( ∫_t^1 (h − t) Π'(dh) ) dt = ∞.

The module evaluates this integral (in log space, since for steep laws the
integrand overflows a double long before ``t`` gets small), simulates the
shadows above a length floor ``δ_len`` and reports multiplicities and the
exact uncovered gaps.

Births are sampled on ``[0, T]`` by default, matching a construction on the
half-line ``s ≥ 0``; ``past_births=True`` also samples births on
``[−h_cap, 0)`` with ``h_cap`` the ``1 − 10⁻⁶`` quantile of the length law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from .rng import RngStream

__all__ = [
    "IntensityLaw",
    "shepp_integral",
    "ShadowSet",
    "sample_shadows",
    "CoverReport",
    "cover_report",
    "simulate_shadows",
    "expected_multiplicity",
    "alive_count_stable",
    "SchmulandTable",
    "schmuland_experiment",
    "main_theorem_probe",
]


@dataclass(frozen=True)
class IntensityLaw:
    """Length intensity ``Π'(dh)``.

    * ``power``: ``c h^(−β) dh`` with ``β > 1``
    * ``schmuland``: ``θ h^(−2) dh``
    * ``stable_tail``: ``θ ε^(2−α) (α−1)^(α/(1−α)) h^(α/(1−α)) dh``
    * ``tabulated``: piecewise linear density through ``(hs, dens)``, zero outside
    """
    kind: str
    c: float = 0.0
    beta: float = 2.0
    theta: float = 0.0
    epsilon: float = 1.0
    alpha: float = 1.5
    hs: tuple = ()
    dens: tuple = ()

    def __post_init__(self):
        if self.kind not in ("power", "schmuland", "stable_tail", "tabulated"):
            raise ValueError(f"unknown intensity kind {self.kind!r}")
        if self.kind == "power" and (self.c < 0 or self.beta <= 1):
            raise ValueError("power law needs c >= 0 and beta > 1")
        if self.kind in ("schmuland", "stable_tail") and self.theta < 0:
            raise ValueError("theta must be nonnegative")
        if self.kind == "stable_tail" and (not 1 < self.alpha < 2 or self.epsilon <= 0):
            raise ValueError("stable_tail needs alpha in (1, 2) and epsilon > 0")
        if self.kind == "tabulated":
            hs, d = np.asarray(self.hs, float), np.asarray(self.dens, float)
            if hs.size < 2 or hs.size != d.size or np.any(np.diff(hs) <= 0) or hs[0] <= 0:
                raise ValueError("tabulated law needs increasing positive hs")
            if np.any(d < 0):
                raise ValueError("tabulated density must be nonnegative")

    @classmethod
    def power(cls, c, beta):
        return cls("power", c=float(c), beta=float(beta))

    @classmethod
    def schmuland(cls, theta):
        return cls("schmuland", theta=float(theta))

    @classmethod
    def stable_tail(cls, theta, epsilon, alpha):
        return cls("stable_tail", theta=float(theta), epsilon=float(epsilon),
                   alpha=float(alpha))

    @classmethod
    def tabulated(cls, hs, dens):
        return cls("tabulated", hs=tuple(map(float, hs)), dens=tuple(map(float, dens)))

    def as_power(self) -> tuple[float, float] | None:
        """``(c, β)`` when the law is a pure power ``c h^(−β)``."""
        if self.kind == "power":
            return self.c, self.beta
        if self.kind == "schmuland":
            return self.theta, 2.0
        if self.kind == "stable_tail":
            a = self.alpha
            c = self.theta * self.epsilon ** (2 - a) * (a - 1) ** (a / (1 - a))
            return c, a / (a - 1)
        return None

    def density(self, h):
        h = np.asarray(h, dtype=float)
        cp = self.as_power()
        if cp is not None:
            return cp[0] * h ** (-cp[1])
        return np.interp(h, self.hs, self.dens, left=0.0, right=0.0)

    def tail(self, h: float) -> float:
        """``Π'((h, ∞))``."""
        cp = self.as_power()
        if cp is not None:
            c, b = cp
            return c * h ** (1 - b) / (b - 1)
        hs, d = np.asarray(self.hs), np.asarray(self.dens)
        if h >= hs[-1]:
            return 0.0
        grid = np.concatenate([[max(h, hs[0])], hs[hs > h]])
        return float(np.trapezoid(np.interp(grid, hs, d), grid))

    def sample_lengths(self, u, delta_len: float):
        """Lengths above ``δ_len`` from uniforms ``u`` (inverse of the tail)."""
        u = np.asarray(u, dtype=float)
        cp = self.as_power()
        if cp is not None:
            return delta_len * u ** (-1.0 / (cp[1] - 1.0))
        hs = np.asarray(self.hs)
        grid = np.concatenate([[max(delta_len, hs[0])], hs[hs > delta_len]])
        dens = np.interp(grid, hs, np.asarray(self.dens))
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        target = (1 - u) * cum[-1]
        k = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, grid.size - 2)
        # the density is linear in each cell, so the cell CDF is a quadratic
        d0 = dens[k]
        slope = (dens[k + 1] - d0) / (grid[k + 1] - grid[k])
        r = target - cum[k]
        root = np.sqrt(np.maximum(d0 * d0 + 2.0 * slope * r, 0.0))
        with np.errstate(invalid="ignore", divide="ignore"):
            z = np.where(d0 + root > 0, 2.0 * r / (d0 + root), 0.0)
        return np.minimum(grid[k] + z, grid[k + 1])

    def inner(self, t):
        """``∫_t^1 (h − t) Π'(dh)`` for ``0 < t ≤ 1``."""
        t = np.asarray(t, dtype=float)
        cp = self.as_power()
        if cp is not None:
            c, b = cp
            if c == 0:
                return np.zeros_like(t)
            if b == 2.0:
                return c * (-np.log(t) - 1.0 + t)
            if b == 1.0:
                return c * ((1.0 - t) + t * np.log(t))
            return c * ((1.0 - t ** (2 - b)) / (2 - b) - t * (1.0 - t ** (1 - b)) / (1 - b))
        # linear density on each cell: integrate (h − t)(d0 + m(h − x0)) exactly
        hs, d = np.asarray(self.hs), np.asarray(self.dens)
        out = np.zeros_like(t)
        for x0, x1, d0, d1 in zip(hs[:-1], hs[1:], d[:-1], d[1:]):
            m = (d1 - d0) / (x1 - x0)
            lo = np.clip(t, x0, min(x1, 1.0))
            hi = min(x1, 1.0)
            if hi <= x0:
                break

            def prim(h):
                # antiderivative of (h − t)(d0 − m x0 + m h) in h
                a0 = d0 - m * x0
                return m * h**3 / 3 + (a0 - m * t) * h**2 / 2 - a0 * t * h

            out += prim(hi) - prim(lo)
        return out


def _log_shepp(law: IntensityLaw, t_floor: float, n: int = 4000) -> float:
    """``log ∫_{t_floor}^1 exp(inner(t)) dt`` by Gauss-Legendre panels in ``log t``."""
    if t_floor >= 1:
        return -math.inf
    x, w = np.polynomial.legendre.leggauss(8)
    edges = np.linspace(math.log(t_floor), 0.0, n + 1 if law.kind != "tabulated" else 41)
    a, b = edges[:-1, None], edges[1:, None]
    s = 0.5 * (a + b) + 0.5 * (b - a) * x
    t = np.exp(s)
    logf = law.inner(t) + s
    return float(logsumexp(logf + np.log(0.5 * (b - a) * w)))


def shepp_integral(law: IntensityLaw, t_floor: float = 1e-5, *,
                   floors=(1e-2, 1e-3, 1e-4, 1e-5), ratio: float = 1.5):
    """``(I(t_floor), classification)`` with classification ``"finite"`` or ``"divergent"``.

    ``I`` is returned as a float (possibly ``inf`` on overflow); the analytic
    answer decides the class for the power-type kinds, and the growth rule
    ``I(10^(−k−1)) / I(10^(−k)) ≥ ratio`` over the last two decades is used
    for tabulated laws.
    """
    if not 0 < t_floor < 1:
        raise ValueError("t_floor must lie in (0, 1)")
    log_i = _log_shepp(law, t_floor)
    value = math.exp(log_i) if log_i < 700 else math.inf
    cp = law.as_power()
    if cp is not None:
        c, b = cp
        divergent = c > 0 and (b > 2 or (b == 2 and c >= 1))
    else:
        logs = [_log_shepp(law, f) for f in floors]
        growth = np.diff(logs)
        divergent = bool(np.all(growth[-2:] >= math.log(ratio)))
    return value, "divergent" if divergent else "finite"


# --- shadows ---------------------------------------------------------------------------

@dataclass
class ShadowSet:
    """Shadows ``[s, s + h)`` with thinning marks ``u`` (uniform on ``[0, 1]``)."""
    s: np.ndarray
    h: np.ndarray
    u: np.ndarray
    T: float
    delta_len: float

    def restrict(self, delta_len: float | None = None, keep_fraction: float = 1.0):
        """Sub-set with ``h ≥ δ_len`` and ``u ≤ keep_fraction`` (a coupled thinning)."""
        d = self.delta_len if delta_len is None else delta_len
        if d < self.delta_len:
            raise ValueError("cannot lower the length floor of an existing sample")
        m = (self.h >= d) & (self.u <= keep_fraction)
        return ShadowSet(self.s[m], self.h[m], self.u[m], self.T, d)


def sample_shadows(rng: RngStream, law: IntensityLaw, delta_len: float, T: float, *,
                   past_births: bool = False) -> ShadowSet:
    """Poisson shadows with ``h ≥ δ_len`` and births in ``[0, T]`` (or ``[−h_cap, T]``)."""
    if delta_len <= 0 or T <= 0:
        raise ValueError("delta_len and T must be positive")
    rate = law.tail(delta_len)
    if not math.isfinite(rate):
        raise ValueError("restricted intensity is not finite")
    lo = 0.0
    if past_births and rate > 0:
        lo = -float(law.sample_lengths(1e-6, delta_len))
    g = rng.generator
    n = g.poisson(rate * (T - lo)) if rate > 0 else 0
    s = np.sort(lo + (T - lo) * g.random(n))
    h = law.sample_lengths(1.0 - g.random(n), delta_len)
    u = g.random(n)
    return ShadowSet(s, np.asarray(h, float), u, float(T), float(delta_len))


@dataclass
class CoverReport:
    grid: np.ndarray
    counts: np.ndarray
    gaps: np.ndarray = field(repr=False)     # shape (m, 2), maximal uncovered intervals
    T: float = 1.0

    @property
    def min_count(self) -> int:
        return int(self.counts.min()) if self.counts.size else 0

    def has_gap(self, a: float = 0.0, b: float | None = None) -> bool:
        """Whether an uncovered interval of positive length meets ``[a, b]``."""
        b = self.T if b is None else b
        if self.gaps.size == 0:
            return False
        lo = np.maximum(self.gaps[:, 0], a)
        hi = np.minimum(self.gaps[:, 1], b)
        return bool(np.any(hi > lo))


def _gaps(s, e, T):
    """Uncovered parts of ``[0, T]`` given intervals ``[s_i, e_i)`` (any order)."""
    if s.size == 0:
        return np.array([[0.0, T]])
    order = np.argsort(s, kind="stable")
    s, e = s[order], e[order]
    reach = np.maximum.accumulate(e)
    out = []
    if s[0] > 0:
        out.append((0.0, min(s[0], T)))
    # a gap opens after interval i when the running reach stops short of s[i+1]
    nxt = np.append(s[1:], np.inf)
    idx = np.nonzero(reach < nxt)[0]
    for i in idx:
        a, b = reach[i], min(nxt[i], T)
        if a < T and b > a:
            out.append((max(a, 0.0), b))
    return np.array(out).reshape(-1, 2)


def cover_report(shadows: ShadowSet, grid) -> CoverReport:
    """Multiplicity ``N_t = #{i: s_i ≤ t < s_i + h_i}`` on ``grid`` and exact gaps."""
    grid = np.asarray(grid, dtype=float)
    s = np.sort(shadows.s)
    e = np.sort(shadows.s + shadows.h)
    counts = (np.searchsorted(s, grid, side="right")
              - np.searchsorted(e, grid, side="right"))
    gaps = _gaps(shadows.s, shadows.s + shadows.h, shadows.T)
    return CoverReport(grid, counts, gaps, shadows.T)


def simulate_shadows(rng: RngStream, law: IntensityLaw, delta_len: float, T: float, grid,
                     *, past_births: bool = False) -> CoverReport:
    return cover_report(sample_shadows(rng, law, delta_len, T, past_births=past_births), grid)


def expected_multiplicity(law: IntensityLaw, delta_len: float, t: float) -> float:
    """``E[N_t] = ∫_0^t Π'((max(t − s, δ_len), ∞)) ds`` for births in ``[0, t]``."""
    if t <= 0:
        return 0.0
    head = min(delta_len, t) * law.tail(delta_len)
    if t <= delta_len:
        return head
    body = integrate.quad(lambda x: law.tail(x), delta_len, t, limit=200)[0]
    return head + body


def alive_count_stable(rng: RngStream, theta: float, epsilon: float, alpha: float,
                       delta_len: float, T: float, grid) -> np.ndarray:
    """Number of excursions alive on ``grid`` among those with ``ℓ > δ_len`` and mark
    ``u ≤ θ ε^(2−α)``; this is the shadow count for the stable-tail law."""
    if theta == 0:
        return np.zeros(np.asarray(grid).size, dtype=np.int64)
    law = IntensityLaw.stable_tail(theta, epsilon, alpha)
    return simulate_shadows(rng, law, delta_len, T, grid).counts


@dataclass
class SchmulandTable:
    thetas: np.ndarray
    deltas: np.ndarray
    frequencies: np.ndarray        # shape (len(thetas), len(deltas))
    classification: list
    n_reps: int


def schmuland_experiment(rng: RngStream, theta, deltas, T: float = 1.0, n_reps: int = 500,
                         *, t0_fraction: float = 0.05) -> SchmulandTable:
    """Frequency of an uncovered gap in ``[t₀, T]`` under ``θ h^(−2) dh``.

    One sample per replicate at the largest ``θ`` and smallest ``δ_len``;
    the other cells are coupled thinnings of it, so frequencies are
    monotone in both parameters replicate by replicate.
    """
    thetas = np.atleast_1d(np.asarray(theta, dtype=float))
    deltas = np.asarray(deltas, dtype=float)
    if np.any(thetas <= 0):
        raise ValueError("theta must be positive")
    tmax, dmin = thetas.max(), deltas.min()
    law = IntensityLaw.schmuland(tmax)
    t0 = t0_fraction * T
    hits = np.zeros((thetas.size, deltas.size))
    for r in range(n_reps):
        base = sample_shadows(rng.child(r), law, dmin, T)
        for i, th in enumerate(thetas):
            for j, d in enumerate(deltas):
                sub = base.restrict(d, th / tmax)
                hits[i, j] += cover_report(sub, []).has_gap(t0, T)
    cls = [shepp_integral(IntensityLaw.schmuland(th))[1] for th in thetas]
    return SchmulandTable(thetas, deltas, hits / n_reps, cls, n_reps)


def main_theorem_probe(rng: RngStream, theta: float, epsilon: float, alpha: float, deltas,
                       T: float = 1.0, n_reps: int = 200, *, t0: float = 0.05,
                       n_grid: int = 200) -> np.ndarray:
    """Minimum over ``n_grid`` points of ``[t₀, T]`` of the stable-tail alive count.

    Returns an array ``(n_reps, len(deltas))``; each replicate is sampled at
    the smallest ``δ_len`` and restricted for the others.
    """
    deltas = np.asarray(deltas, dtype=float)
    law = IntensityLaw.stable_tail(theta, epsilon, alpha)
    grid = np.linspace(t0, T, n_grid)
    out = np.empty((n_reps, deltas.size), dtype=np.int64)
    for r in range(n_reps):
        base = sample_shadows(rng.child(r), law, deltas.min(), T)
        for j, d in enumerate(deltas):
            out[r, j] = cover_report(base.restrict(d), grid).min_count
    return out
