"""Finite-level lookdown construction of the Beta Fleming-Viot process.

Levels ``1..n`` carry types in ``[0, 1]``.  A lookdown event involving a
``k``-subset ``i₁ < … < i_k`` happens at rate ``λ(n, k) = ∫ x^(k−2) (1−x)^(n−k)
Λ(dx)``; levels ``i₂..i_k`` copy the type at ``i₁`` and the types they held
are pushed up, together with everything above, keeping their order.  A
mutation hits each level at rate ``θ``: a fresh uniform type is inserted
there and the old types above are pushed up.  Types pushed past level ``n``
are discarded, which is the usual finite-window truncation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import betaln, gammaln

from .flemingviot import ProbabilityAtomicMeasure
from .rng import RngStream

__all__ = [
    "beta_rate",
    "RateTable",
    "rate_table",
    "LookdownState",
    "LookdownPath",
    "simulate_lookdown",
    "empirical_measure",
    "atom_count_trajectory",
]


def _check_alpha(alpha):
    if not 1.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (1, 2), got {alpha}")


def beta_rate(n: int, k: int, alpha: float) -> float:
    """``λ(n, k)`` for ``Λ = Beta(2−α, α)``: ``B(k−α, n−k+α) / B(2−α, α)``."""
    _check_alpha(alpha)
    if not (isinstance(n, (int, np.integer)) and isinstance(k, (int, np.integer))):
        raise TypeError("n and k must be integers")
    if n < 2 or not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got n={n}, k={k}")
    return float(np.exp(betaln(k - alpha, n - k + alpha) - betaln(2.0 - alpha, alpha)))


@dataclass(frozen=True)
class RateTable:
    """Rates of ``k``-mergers among ``n`` levels.

    ``weights[k−2] = C(n, k) λ(n, k)`` is the rate at which *some* ``k``-subset
    is hit; ``total`` is their sum.
    """
    n: int
    alpha: float
    lam: np.ndarray
    weights: np.ndarray
    cumulative: np.ndarray
    total: float


def rate_table(n: int, alpha: float) -> RateTable:
    _check_alpha(alpha)
    if n < 2:
        raise ValueError("need n >= 2")
    k = np.arange(2, n + 1)
    log_lam = betaln(k - alpha, n - k + alpha) - betaln(2.0 - alpha, alpha)
    log_binom = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    w = np.exp(log_lam + log_binom)
    cum = np.cumsum(w)
    return RateTable(n, alpha, np.exp(log_lam), w, cum, float(cum[-1]))


@dataclass
class LookdownState:
    """Types on levels ``1..n`` at time ``t`` (level 1 first)."""
    types: np.ndarray
    t: float = 0.0

    @property
    def n(self) -> int:
        return self.types.size


@dataclass
class LookdownPath:
    grid: np.ndarray
    types: np.ndarray          # shape (len(grid), n)
    n_lookdowns: int
    n_mutations: int

    def state(self, i: int) -> LookdownState:
        return LookdownState(self.types[i].copy(), float(self.grid[i]))


@numba.njit(cache=True)
def _lookdown_kernel(gen, types0, cum, theta, grid):
    n = types0.size
    xi = types0.copy()
    tmp = np.empty(n)
    perm = np.arange(n)
    out = np.empty((grid.size, n))
    rate_ld = cum[-1]
    rate_mut = n * theta
    total = rate_ld + rate_mut
    t = 0.0
    g = 0
    n_ld = 0
    n_mut = 0
    while g < grid.size:
        dt = gen.standard_exponential() / total if total > 0 else np.inf
        while g < grid.size and t + dt > grid[g]:
            out[g, :] = xi
            g += 1
        if g == grid.size:
            break
        t += dt
        if gen.random() * total < rate_mut:
            # mutation at a uniform level; old types from there on move up by one
            lev = int(gen.random() * n)
            for i in range(n - 1, lev, -1):
                xi[i] = xi[i - 1]
            xi[lev] = gen.random()
            n_mut += 1
            continue
        # choose k with probability proportional to C(n, k) λ(n, k)
        k = np.searchsorted(cum, gen.random() * rate_ld, side="right") + 2
        k = min(k, n)
        # uniform k-subset by a partial shuffle
        for j in range(k):
            r = j + int(gen.random() * (n - j))
            perm[j], perm[r] = perm[r], perm[j]
        sel = np.sort(perm[:k])
        chosen = np.zeros(n, np.bool_)
        for j in range(1, k):
            chosen[sel[j]] = True
        # old types fill the non-copying levels in order; overflow drops off
        src = 0
        for i in range(n):
            if not chosen[i]:
                tmp[i] = xi[src]
                src += 1
        parent = xi[sel[0]]
        for j in range(1, k):
            tmp[sel[j]] = parent
        xi[:] = tmp
        n_ld += 1
    return out, n_ld, n_mut


def simulate_lookdown(rng: RngStream, n: int, alpha: float, theta: float, grid, *,
                      initial_types=None) -> LookdownPath:
    """Types on ``n`` levels at the times in ``grid`` (sorted, nonnegative).

    ``initial_types`` defaults to i.i.d. uniforms, i.e. ``Y_0`` uniform.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if np.any(grid < 0) or np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted and nonnegative")
    tab = rate_table(int(n), alpha)
    if initial_types is None:
        types0 = rng.generator.random(n)
    else:
        types0 = np.asarray(initial_types, dtype=float)
        if types0.shape != (n,) or np.any(types0 < 0) or np.any(types0 > 1):
            raise ValueError("initial_types must be n values in [0, 1]")
    out, n_ld, n_mut = _lookdown_kernel(rng.generator, types0, tab.cumulative, float(theta),
                                        grid)
    return LookdownPath(grid, out, int(n_ld), int(n_mut))


def empirical_measure(state: LookdownState) -> ProbabilityAtomicMeasure:
    """``(1/n) Σ δ_{ξ_i}`` with equal types merged."""
    return ProbabilityAtomicMeasure(state.types, np.full(state.n, 1.0 / state.n))


def atom_count_trajectory(rng: RngStream, n: int, alpha: float, theta: float, grid,
                          **kw) -> np.ndarray:
    """Number of distinct types at each grid time."""
    path = simulate_lookdown(rng, n, alpha, theta, grid, **kw)
    return np.array([np.unique(row).size for row in path.types])
