"""Sampling from the excursion measure ℚ of the stable CSBP.

Only two functionals of an excursion are needed by the simulators:

* its length ``ℓ``, with ``ℚ(ℓ > h) = ubar(h)`` (``1/h`` in the Feller case),
  so that conditioned on ``ℓ > δ`` the length is Pareto with tail exponent
  ``1/(α−1)``;
* its mass at age ``δ`` given that it is alive, whose Laplace transform is
  ``1 − u_δ(λ)/ubar(δ)``.

Entrance law table
------------------
Write ``β = α − 1``.  The conditioned entrance mass is ``(βδ)^(1/β) W`` where
``W`` does not depend on ``δ``; its survival function ``S`` has Laplace
transform ``(1 + μ^β)^(−1/β)``.  Expanding in powers of ``μ^(−β)`` gives the
convergent series

    S(x) = Σ_k binom(−1/β, k) x^(kβ) / Γ(1 + kβ),

used for small ``x``; larger ``x`` use the fixed Talbot contour, valid because
the transform is analytic off the negative axis.  ``S`` is tabulated on a
logarithmic grid and sampled by inverting ``−log S`` with linear
interpolation.  Beyond the table the Pareto tail ``S(x) ~ x^(−α)/Γ(2−α)`` is
used, anchored at the last grid point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import gammaln

from .csbp import JumpPath, cumulant, simulate_csbp, ubar
from .rng import RngStream

__all__ = [
    "ExcursionAtom",
    "ExcursionTruncation",
    "EntranceLaw",
    "TypeLaw",
    "length_tail",
    "sample_lengths",
    "entrance_law",
    "entrance_mass",
    "entrance_laplace",
    "sample_excursion_set",
]


def length_tail(h, alpha):
    """``ℚ(ℓ > h)``; ``alpha = 2`` selects the Feller branch ``1/h``."""
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise ValueError("h must be positive")
    if alpha == 2.0:
        out = 1.0 / h
    else:
        out = ubar(h, alpha)
    return out[()] if np.ndim(out) == 0 else out


def sample_lengths(rng: RngStream, rate_per_time: float, T: float, delta_len: float,
                   alpha: float) -> np.ndarray:
    """Birth times in ``(0, T]`` and lengths ``ℓ > delta_len``, as an ``(N, 2)`` array."""
    if rate_per_time < 0 or T <= 0 or delta_len <= 0:
        raise ValueError("need rate_per_time >= 0, T > 0, delta_len > 0")
    mean = rate_per_time * T * float(length_tail(delta_len, alpha))
    n = rng.generator.poisson(mean) if mean > 0 else 0
    g = rng.generator
    s = T * (1.0 - g.random(n))
    tail = 1.0 if alpha == 2.0 else 1.0 / (alpha - 1.0)
    ell = delta_len * (1.0 - g.random(n)) ** (-1.0 / tail)
    order = np.argsort(s, kind="stable")
    return np.column_stack([s[order], ell[order]])


# --- entrance law ------------------------------------------------------------------

def _series_survival(x, beta, n_terms=80):
    """Power series for ``S`` in ``x^β``; accurate while ``x^β`` is small."""
    x = np.asarray(x, dtype=float)
    k = np.arange(n_terms)
    # binom(-1/β, k) by its product form; scipy's binom is nan at negative integers
    ratios = np.concatenate([[1.0], (-1.0 / beta - k[1:] + 1.0) / k[1:]])
    coef = np.cumprod(ratios) * np.exp(-gammaln(1.0 + k * beta))
    xb = x[..., None] ** beta
    return np.sum(coef * xb ** k, axis=-1)


def _talbot_survival(x, beta, M=32):
    """Fixed Talbot inversion of ``(1 + μ^β)^(−1/β)`` at points ``x > 0``."""
    x = np.asarray(x, dtype=float)[..., None]
    r = 2.0 * M / (5.0 * x)
    k = np.arange(1, M)
    th = k * np.pi / M
    cot = 1.0 / np.tan(th)
    s = r * th * (cot + 1j)
    sigma = th + (th * cot - 1.0) * cot
    F = (1.0 + s ** beta) ** (-1.0 / beta)
    F0 = (1.0 + r[..., 0] ** beta) ** (-1.0 / beta)
    terms = np.real(np.exp(x * s) * F * (1.0 + 1j * sigma))
    return (r[..., 0] / M) * (0.5 * F0 * np.exp(r[..., 0] * x[..., 0]) + terms.sum(axis=-1))


def _survival(x, beta):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x ** beta < 0.05
    out[small] = _series_survival(x[small], beta)
    out[~small] = _talbot_survival(x[~small], beta)
    return out


@dataclass(frozen=True)
class EntranceLaw:
    """Tabulated law of ``W`` (conditioned entrance mass at ``δ`` with ``(βδ)^(1/β)`` removed).

    ``log_x`` and ``neg_log_s`` are increasing arrays; ``x_lo`` bounds the
    region handled by the leading small-``x`` term and the Pareto tail takes
    over past ``exp(log_x[-1])``.
    """
    alpha: float
    log_x: np.ndarray = field(repr=False)
    neg_log_s: np.ndarray = field(repr=False)
    small_coef: float

    @property
    def beta(self):
        return self.alpha - 1.0

    def survival(self, x):
        """Tabulated ``S(x)`` (with the small-``x`` and tail extensions)."""
        x = np.asarray(x, dtype=float)
        lx = np.log(np.maximum(x, 1e-300))
        out = np.exp(-np.interp(lx, self.log_x, self.neg_log_s))
        lo = lx < self.log_x[0]
        out[lo] = 1.0 - self.small_coef * x[lo] ** self.beta
        hi = lx > self.log_x[-1]
        out[hi] = np.exp(-self.neg_log_s[-1] - self.alpha * (lx[hi] - self.log_x[-1]))
        return out

    def quantile_from_exp(self, e):
        """``W`` with ``−log S(W) = e``, for ``e`` standard exponential."""
        return _entrance_from_exp(np.asarray(e, dtype=float), self.log_x, self.neg_log_s,
                                  self.alpha, self.small_coef)

    def sample(self, rng: RngStream, delta: float, size=None):
        """Conditioned entrance masses at age ``delta``."""
        if delta <= 0:
            raise ValueError("delta must be positive")
        e = rng.generator.standard_exponential(size)
        return self.scale(delta) * self.quantile_from_exp(e)

    def scale(self, delta: float) -> float:
        return ((self.alpha - 1.0) * delta) ** (1.0 / (self.alpha - 1.0))


def _entrance_from_exp(e, log_x, neg_log_s, alpha, small_coef):
    beta = alpha - 1.0
    out = np.exp(np.interp(e, neg_log_s, log_x))
    lo = e < neg_log_s[0]
    # 1 - exp(-e) = small_coef x^beta to leading order
    out[lo] = (-np.expm1(-e[lo]) / small_coef) ** (1.0 / beta)
    hi = e > neg_log_s[-1]
    out[hi] = np.exp(log_x[-1] + (e[hi] - neg_log_s[-1]) / alpha)
    return out[()] if out.ndim == 0 else out


@lru_cache(maxsize=None)
def entrance_law(alpha: float, n_grid: int = 2**14) -> EntranceLaw:
    """Build (once per ``alpha``) the entrance-law table."""
    if not 1.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (1, 2), got {alpha}")
    beta = alpha - 1.0
    small_coef = math.exp(-math.log(beta) - math.lgamma(beta + 1.0))
    # below x_lo the CDF is under 1e-4 and its leading term is exact to O(x^β)
    x_lo = (1e-4 / small_coef) ** (1.0 / beta)
    # S(x_hi) about 1e-10 from the tail asymptote
    x_hi = (1e-10 * math.gamma(2.0 - alpha)) ** (-1.0 / alpha)
    log_x = np.linspace(math.log(x_lo), math.log(x_hi), n_grid)
    s = _survival(np.exp(log_x), beta)
    if not np.all(np.isfinite(s)) or np.any(s <= 0) or np.any(np.diff(s) >= 0):
        raise ArithmeticError("entrance-law inversion failed: survival not decreasing")
    return EntranceLaw(alpha, log_x, -np.log(s), small_coef)


def entrance_mass(rng: RngStream, delta_age: float, alpha: float, size=None):
    """Mass ``w_δ`` of an excursion conditioned to be alive at age ``δ``."""
    return entrance_law(alpha).sample(rng, delta_age, size)


def entrance_laplace(lam, delta_age: float, alpha: float):
    """``E[exp(−λ w_δ) | w_δ > 0] = 1 − u_δ(λ)/ubar(δ)``."""
    return 1.0 - cumulant(delta_age, lam, alpha) / ubar(delta_age, alpha)


# --- excursion sets ----------------------------------------------------------------

@dataclass(frozen=True)
class ExcursionTruncation:
    """Finite-intensity restriction of ℚ: by length (``ℓ > δ``) or by age (alive at ``δ``)."""
    mode: str
    delta: float

    def __post_init__(self):
        if self.mode not in ("by_length", "by_age"):
            raise ValueError(f"unknown truncation mode {self.mode!r}")
        if not self.delta > 0:
            raise ValueError("truncation delta must be positive")


@dataclass(frozen=True)
class TypeLaw:
    """Finite measure on ``[0, 1]``: total ``mass`` times a law given by its quantile.

    ``quantile=None`` means uniform, i.e. the measure ``mass · Lebesgue``.
    """
    mass: float = 1.0
    quantile: Callable[[np.ndarray], np.ndarray] | None = None

    def cdf_at_one(self) -> float:
        return self.mass

    def sample(self, u):
        u = np.asarray(u, dtype=float)
        return u if self.quantile is None else np.asarray(self.quantile(u))


@dataclass
class ExcursionAtom:
    birth_time: float
    mark: float
    location: float
    length: float | None = None
    entrance: float | None = None
    skeleton: JumpPath | None = None
    delta_age: float | None = None

    def mass_at(self, t: float) -> float:
        """Mass at absolute time ``t``; ages below ``delta_age`` are not represented."""
        if self.skeleton is None:
            raise ValueError("atom carries no mass skeleton (by_length truncation)")
        age = t - self.birth_time
        if age < self.delta_age:
            raise ValueError("mass below the skeleton age is not represented")
        return float(self.skeleton.at(age - self.delta_age))


def sample_excursion_set(rng: RngStream, immigration_rate_per_time: float, T: float,
                         trunc: ExcursionTruncation, alpha: float,
                         F: TypeLaw = TypeLaw(), I: TypeLaw = TypeLaw(), *,
                         delta_x: float | None = None,
                         rel_delta_x: float = 0.1) -> list[ExcursionAtom]:
    """Atoms of the restricted Poisson set of excursions on ``[0, T]``.

    The initial component sits at ``s = 0`` with mark 0; immigrants have
    ``s`` uniform on ``(0, T]`` and mark ``u`` uniform on
    ``[0, immigration_rate_per_time]``.  With ``by_age`` each atom gets an
    entrance mass and a truncated-CSBP continuation for the rest of the
    horizon; with ``by_length`` it gets a length.

    Entrance masses are of order ``(βδ)^(1/β)``, which is usually far below
    any fixed jump floor, so by default each continuation uses the floor
    ``rel_delta_x`` times its own entrance mass (a fixed ``delta_x`` overrides
    this) and is snapped a thousand times lower, keeping the mass lost at the
    snap negligible.
    """
    if immigration_rate_per_time < 0 or T <= 0:
        raise ValueError("need a nonnegative rate and T > 0")
    g = rng.generator
    if trunc.mode == "by_length":
        q_mass = float(length_tail(trunc.delta, alpha))
    else:
        q_mass = float(ubar(trunc.delta, alpha))
    n0 = g.poisson(F.mass * q_mass) if F.mass > 0 else 0
    n1_mean = immigration_rate_per_time * I.mass * T * q_mass
    n1 = g.poisson(n1_mean) if n1_mean > 0 else 0
    births = np.concatenate([np.zeros(n0), np.sort(T * (1.0 - g.random(n1)))])
    marks = np.concatenate([np.zeros(n0), immigration_rate_per_time * g.random(n1)])
    locs = np.concatenate([F.sample(g.random(n0)), I.sample(g.random(n1))])
    atoms = []
    if trunc.mode == "by_length":
        tail = 1.0 if alpha == 2.0 else 1.0 / (alpha - 1.0)
        ell = trunc.delta * (1.0 - g.random(births.size)) ** (-1.0 / tail)
        for s, u, a, l in zip(births, marks, locs, ell):
            atoms.append(ExcursionAtom(float(s), float(u), float(a), length=float(l)))
        return atoms
    law = entrance_law(alpha)
    w = law.sample(rng, trunc.delta, births.size)
    for s, u, a, m in zip(births, marks, locs, w):
        rest = T - s - trunc.delta
        path = None
        if rest > 0:
            dx = delta_x if delta_x is not None else rel_delta_x * float(m)
            path = simulate_csbp(rng, float(m), alpha, rest, dx, absorb=1e-3 * dx)
        atoms.append(ExcursionAtom(float(s), float(u), float(a), entrance=float(m),
                                   skeleton=path, delta_age=trunc.delta))
    return atoms
