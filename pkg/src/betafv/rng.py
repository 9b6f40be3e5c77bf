"""Seedable random streams and the elementary samplers used by the simulators.

Two kinds of randomness live here:

* :class:`RngStream` wraps a numpy ``Generator`` whose key is derived from
  ``(seed, stream_id)`` through ``SeedSequence`` spawn keys, so replicate
  streams are independent by construction and can be created in any order.
* A small counter-based generator (``mix64`` / ``counter_uniform``) usable
  inside numba kernels.  It gives every excursion atom its own stream keyed by
  the atom's identity, which is what makes coupled runs share atoms exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np
from scipy import stats
from scipy.special import gamma as gamma_fn

__all__ = [
    "RngStream",
    "StableParams",
    "c_alpha",
    "sample_stable_increment",
    "sample_ppp_box",
    "sample_pareto_tail",
    "mix64",
    "derive_key",
    "counter_uniform",
]


def c_alpha(alpha: float) -> float:
    """Constant of the Lévy measure ``c_α x^(−1−α) dx`` giving ``ψ(u) = u^α``."""
    if not 1.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (1, 2), got {alpha}")
    return alpha * (alpha - 1.0) / gamma_fn(2.0 - alpha)


@dataclass(frozen=True)
class StableParams:
    alpha: float

    def __post_init__(self):
        if not 1.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (1, 2], got {self.alpha}")

    @property
    def c_alpha(self) -> float:
        # alpha = 2 is the Feller limit; the jump measure degenerates there.
        if self.alpha == 2.0:
            return math.inf
        return c_alpha(self.alpha)


class RngStream:
    """Deterministic random stream identified by ``(seed, stream_id)``.

    ``stream_id`` may be an integer or a tuple of integers; :meth:`child`
    appends to the key so nested substreams never overlap.
    """

    def __init__(self, seed: int, stream_id: int | Sequence[int] = 0):
        if isinstance(stream_id, (int, np.integer)):
            key = (int(stream_id),)
        else:
            key = tuple(int(s) for s in stream_id)
        if any(k < 0 for k in key) or seed < 0:
            raise ValueError("seed and stream ids must be nonnegative")
        self.seed = int(seed)
        self.key = key
        ss = np.random.SeedSequence(self.seed, spawn_key=key)
        # SFC64 is the fastest numpy bit generator and is accepted by numba.
        self.generator = np.random.Generator(np.random.SFC64(ss))

    @property
    def stream_id(self) -> int:
        return self.key[0]

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.key + (int(index),))

    def uint64(self) -> np.uint64:
        """A fresh 64-bit key for counter-based kernels."""
        return self.generator.integers(0, 2**64, dtype=np.uint64)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"


def _stable_sigma(alpha: float) -> float:
    return abs(math.cos(math.pi * alpha / 2.0)) ** (1.0 / alpha)


def sample_stable_increment(rng: RngStream, alpha: float, dt: float, size=None):
    """Increment over ``dt`` of the centred spectrally positive stable process.

    The Lévy measure is ``c_α x^(−1−α)`` on ``(0, ∞)`` with no Gaussian part,
    so ``E[exp(−λ L_t)] = exp(t λ^α)``.  In the S1 parameterisation this is
    ``β = 1`` with scale ``|cos(πα/2)|^(1/α)``; scipy draws it with the
    Chambers-Mallows-Stuck transform.
    """
    if not 1.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (1, 2), got {alpha}")
    if dt < 0:
        raise ValueError(f"dt must be nonnegative, got {dt}")
    if dt == 0:
        return 0.0 if size is None else np.zeros(size)
    scale = _stable_sigma(alpha) * dt ** (1.0 / alpha)
    out = stats.levy_stable.rvs(alpha, 1.0, loc=0.0, scale=scale, size=size,
                                random_state=rng.generator)
    return float(out) if size is None else out


def sample_ppp_box(rng: RngStream, rate: float,
                   region: Sequence[tuple[float, float]]) -> np.ndarray:
    """Homogeneous Poisson points in a box, returned as an ``(N, d)`` array."""
    region = [(float(lo), float(hi)) for lo, hi in region]
    if not region or any(not hi > lo for lo, hi in region):
        raise ValueError(f"degenerate region {region}")
    if rate < 0:
        raise ValueError("rate must be nonnegative")
    lo = np.array([r[0] for r in region])
    hi = np.array([r[1] for r in region])
    mean = rate * float(np.prod(hi - lo))
    if not math.isfinite(mean):
        raise ValueError("rate * volume is not finite")
    n = rng.generator.poisson(mean) if mean > 0 else 0
    return lo + (hi - lo) * rng.generator.random((n, len(region)))


def sample_pareto_tail(rng: RngStream, delta: float, tail_exponent: float, size=None):
    """Pareto law on ``[delta, ∞)`` with survival ``(x/delta)^(−tail_exponent)``."""
    if delta <= 0 or tail_exponent <= 0:
        raise ValueError("delta and tail_exponent must be positive")
    # 1 - U lies in (0, 1], so the output is always >= delta.
    u = 1.0 - rng.generator.random(size)
    return delta * u ** (-1.0 / tail_exponent)


# --- counter-based generator for numba kernels --------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 2.0 ** -53


@numba.njit(cache=True, inline="always")
def mix64(z):
    """splitmix64 finaliser; a bijection on 64-bit words."""
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(cache=True, inline="always")
def derive_key(key, a):
    key = np.uint64(key)
    return mix64(key ^ mix64(np.uint64(a) * _GOLDEN + _GOLDEN))


@numba.njit(cache=True, inline="always")
def counter_uniform(key, counter):
    """Uniform on (0, 1) that depends only on ``(key, counter)``."""
    key = np.uint64(key)
    z = mix64(key + np.uint64(counter) * _GOLDEN)
    return (float(z >> _S11) + 0.5) * _INV53
