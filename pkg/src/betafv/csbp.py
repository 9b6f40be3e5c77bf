"""α-stable continuous-state branching processes with ``ψ(u) = u^α``.

Closed forms
------------
``u_t(λ) = (λ^(1−α) + (α−1)t)^(1/(1−α))`` solves ``u' = −u^α`` and
``E_v[exp(−λ X_t)] = exp(−v u_t(λ))``.  Letting ``λ → ∞`` gives
``ubar(t) = ((α−1)t)^(1/(1−α))`` and ``P_v(X_t = 0) = exp(−v ubar(t))``.

Truncated path scheme
---------------------
Jumps of size ``x ≥ δ_x`` arrive at rate ``X c_α x^(−1−α) dx`` and are
compensated by the linear drift ``−κ_b X``.  Dropping the jumps below ``δ_x``
outright loses their variance ``σ²_δ = c_α δ_x^(2−α)/(2−α)``, which at α near
2 is of order one and visibly biases the law.  Instead the small jumps are
replaced by fixed jumps of size ``h = η δ_x`` at rate ``σ²_δ/h²`` per unit
mass, compensated exactly, which matches the first two moments of the
discarded part.

The scheme is simulated in the Lamperti clock ``dθ = X dt``.  There the mass
is a Lévy process (constant rate compound Poisson plus drift), so no
thinning is needed; real time is recovered exactly as ``dt = dθ / X``, which
between two events is ``log(y_start / y_end)/κ``.

Absorption: the drift alone only decays exponentially, so a path is snapped
when it crosses a level ``a`` (``a = δ_x`` by default).  From there the
remaining extinction time is drawn from its exact law
``P(τ ≤ u) = exp(−a ubar(u))`` and the residual mass decays deterministically
until then.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .rng import RngStream, c_alpha

__all__ = [
    "CsbpLaw",
    "JumpPath",
    "TruncationScheme",
    "cumulant",
    "ubar",
    "extinction_prob",
    "flow_mass",
    "simulate_csbp",
    "csbp_marginals",
    "simulate_csbp_flow",
    "simulate_feller",
    "feller_marginals",
    "flow_inv_power_integral",
    "flow_inv_power_inverse",
]


def _check_alpha(alpha, allow_two=True):
    hi_ok = alpha <= 2.0 if allow_two else alpha < 2.0
    if not (alpha > 1.0 and hi_ok):
        rng = "(1, 2]" if allow_two else "(1, 2)"
        raise ValueError(f"alpha must lie in {rng}, got {alpha}")


def cumulant(t, lam, alpha):
    """``u_t(λ)`` for ``ψ(u) = u^α``; vectorised over ``t`` and ``lam``."""
    _check_alpha(alpha)
    t = np.asarray(t, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(t < 0) or np.any(lam < 0):
        raise ValueError("t and lambda must be nonnegative")
    with np.errstate(divide="ignore"):
        if alpha == 2.0:
            out = 1.0 / (1.0 / lam + t)
        else:
            b = alpha - 1.0
            out = (lam ** (-b) + b * t) ** (-1.0 / b)
    out = np.where(lam == 0, 0.0, out)
    return out[()] if out.ndim == 0 else out


def ubar(t, alpha):
    """``lim_{λ→∞} u_t(λ) = ((α−1)t)^(1/(1−α))``; equals ``1/t`` at α = 2."""
    _check_alpha(alpha)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t must be positive")
    out = ((alpha - 1.0) * t) ** (1.0 / (1.0 - alpha))
    return out[()] if out.ndim == 0 else out


def extinction_prob(v, t, alpha):
    """``P_v(X_t = 0) = exp(−v ubar(t))``."""
    if np.any(np.asarray(v) < 0):
        raise ValueError("v must be nonnegative")
    return np.exp(-np.asarray(v, dtype=float) * ubar(t, alpha))[()]


@dataclass(frozen=True)
class CsbpLaw:
    """Law of the stable CSBP; thin object-style access to the closed forms."""
    alpha: float

    def __post_init__(self):
        _check_alpha(self.alpha)

    def psi(self, u):
        return np.asarray(u, dtype=float) ** self.alpha

    def cumulant(self, t, lam):
        return cumulant(t, lam, self.alpha)

    def laplace(self, v, t, lam):
        return np.exp(-v * cumulant(t, lam, self.alpha))

    def ubar(self, t):
        return ubar(t, self.alpha)

    def extinction_prob(self, v, t):
        return extinction_prob(v, t, self.alpha)


# --- deterministic flow between events -----------------------------------------

def flow_mass(m0, dt, kappa, growth, alpha):
    """Solution of ``m' = −κ m + c m^(2−α)`` after time ``dt``.

    With ``z = m^(α−1)`` the equation is linear, ``z' = (α−1)(c − κ z)``.
    """
    m0 = np.asarray(m0, dtype=float)
    b = alpha - 1.0
    if growth == 0.0:
        return m0 * np.exp(-kappa * dt)
    z0 = m0 ** b
    if kappa == 0.0:
        z = z0 + b * growth * dt
    else:
        A = growth / kappa
        z = A + (z0 - A) * np.exp(-b * kappa * dt)
    return np.maximum(z, 0.0) ** (1.0 / b)


@dataclass
class JumpPath:
    """Piecewise path: a jump at each event time, deterministic flow between.

    ``values[i]`` is the mass right after the event at ``times[i]``.  On
    ``[times[i], times[i+1])`` the mass follows ``m' = −kappa[i] m +
    growth m^(2−α)``; for piecewise constant paths ``kappa`` is 0 and
    ``growth`` is 0.  ``extinction_time`` is the first time the mass is 0.
    """
    times: np.ndarray
    values: np.ndarray
    kappa: np.ndarray
    horizon: float
    alpha: float = 1.5
    growth: float = 0.0
    absorbed: bool = False
    extinction_time: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.kappa = np.broadcast_to(np.asarray(self.kappa, dtype=float),
                                     self.times.shape).copy()
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise ValueError("event times must be strictly increasing")
        if np.any(self.values < 0):
            raise ValueError("masses must be nonnegative")

    def at(self, t):
        """Mass at time(s) ``t`` (right-continuous)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.times[0]) or np.any(t > self.horizon):
            raise ValueError("query outside the simulated time range")
        idx = np.searchsorted(self.times, t, side="right") - 1
        out = np.empty(idx.shape)
        flat_i, flat_t, flat_o = idx.ravel(), t.ravel(), out.reshape(-1)
        for j, (i, s) in enumerate(zip(flat_i, flat_t)):
            m0 = self.values[i]
            flat_o[j] = 0.0 if m0 == 0.0 else float(
                flow_mass(m0, s - self.times[i], self.kappa[i], self.growth, self.alpha))
        return out[()] if out.ndim == 0 else out


# --- truncated jump scheme -----------------------------------------------------

@dataclass(frozen=True)
class TruncationScheme:
    """Rates of the truncated scheme per unit mass.

    ``lam`` is the total event rate (big plus matched small jumps), ``kappa``
    the compensating decay rate, ``p_big`` the chance an event is a Pareto
    jump above ``delta_x``, ``h`` the fixed small-jump size.
    """
    alpha: float
    delta_x: float
    eta: float
    lam: float
    kappa: float
    p_big: float
    h: float

    @classmethod
    def build(cls, alpha: float, delta_x: float, eta: float = 10.0):
        _check_alpha(alpha, allow_two=False)
        if delta_x <= 0:
            raise ValueError("delta_x must be positive")
        c = c_alpha(alpha)
        lam_big = c * delta_x ** (-alpha) / alpha
        kappa_big = c * delta_x ** (1.0 - alpha) / (alpha - 1.0)
        if eta > 0:
            h = eta * delta_x
            var_small = c * delta_x ** (2.0 - alpha) / (2.0 - alpha)
            r = var_small / h**2
        else:  # plain truncation
            h, r = 0.0, 0.0
        lam = lam_big + r
        kappa = kappa_big + r * h
        if not (math.isfinite(lam) and math.isfinite(kappa)):
            raise OverflowError("delta_x too small: rates are not representable")
        return cls(alpha, delta_x, eta, lam, kappa, lam_big / lam, h)


@numba.njit(cache=True)
def _tail_time(level, e, beta):
    # P(tau <= u) = exp(-level * (beta u)^(-1/beta)); invert at exp(-e)
    return (level / e) ** beta / beta


@numba.njit(cache=True)
def _grid_kernel(gen, n, v, lam, kappa, p_big, dx, h, alpha, times, absorb):
    inv_a = -1.0 / alpha
    beta = alpha - 1.0
    K = times.size
    out = np.zeros((n, K))
    R = np.empty(K)
    nev = 0
    for p in range(n):
        y = v
        tb = 0.0
        for j in range(K):
            R[j] = math.exp(min(kappa * times[j], 700.0))
        P = 1.0  # exp(kappa * (t - tb)) at the current event
        k = 0
        if y <= absorb:
            tc = 0.0
            level = y
            Pd = 1.0
        else:
            level = absorb
            while True:
                yend = y - kappa / lam * gen.standard_exponential()
                if yend <= absorb:
                    Pd = P * y / absorb
                    break
                Pn = P * (y / yend)
                while k < K and R[k] < Pn:
                    out[p, k] = y * P / R[k]
                    k += 1
                if k >= K:
                    break
                P = Pn
                w = gen.random()
                if w < p_big:
                    y = yend + dx * (w / p_big) ** inv_a
                else:
                    y = yend + h
                nev += 1
                if P > 1e100:
                    tb += math.log(P) / kappa
                    P = 1.0
                    for j in range(k, K):
                        R[j] = math.exp(min(kappa * (times[j] - tb), 700.0))
            if k >= K:
                continue
            while k < K and R[k] < Pd:
                out[p, k] = y * P / R[k]
                k += 1
            tc = tb + math.log(Pd) / kappa
        if level <= 0.0:
            continue
        tau = tc + _tail_time(level, gen.standard_exponential(), beta)
        while k < K and times[k] < tau:
            out[p, k] = level * math.exp(-kappa * (times[k] - tc))
            k += 1
    return out, nev


@numba.njit(cache=True)
def _path_kernel(gen, v, lam, kappa, p_big, dx, h, alpha, horizon, absorb):
    inv_a = -1.0 / alpha
    beta = alpha - 1.0
    ts = [0.0]
    vs = [v]
    ext = -1.0
    if v <= 0.0:
        return np.array(ts), np.array(vs), 0.0
    t = 0.0
    y = v
    tc = 0.0
    level = v
    if y > absorb:
        level = absorb
        while True:
            yend = y - kappa / lam * gen.standard_exponential()
            if yend <= absorb:
                tc = t + math.log(y / absorb) / kappa
                break
            tn = t + math.log(y / yend) / kappa
            if tn >= horizon:
                return np.array(ts), np.array(vs), ext
            w = gen.random()
            if w < p_big:
                y = yend + dx * (w / p_big) ** inv_a
            else:
                y = yend + h
            t = tn
            ts.append(t)
            vs.append(y)
        if tc >= horizon:
            return np.array(ts), np.array(vs), ext
        if tc > ts[-1]:
            ts.append(tc)
            vs.append(absorb)
    tau = tc + _tail_time(level, gen.standard_exponential(), beta)
    if tau < horizon:
        ts.append(tau)
        vs.append(0.0)
        ext = tau
    return np.array(ts), np.array(vs), ext


def _resolve_absorb(scheme, absorb):
    return scheme.delta_x if absorb is None else float(absorb)


def simulate_csbp(rng: RngStream, v: float, alpha: float, horizon: float,
                  delta_x: float, *, eta: float = 10.0,
                  absorb: float | None = None) -> JumpPath:
    """One path of the truncated scheme on ``[0, horizon]``.

    Between events the mass decays like ``exp(−κ t)``; the last events are the
    snap at level ``absorb`` and the (exactly sampled) extinction time.
    """
    if v < 0 or horizon <= 0:
        raise ValueError("need v >= 0 and horizon > 0")
    scheme = TruncationScheme.build(alpha, delta_x, eta)
    a = _resolve_absorb(scheme, absorb)
    ts, vs, ext = _path_kernel(rng.generator, float(v), scheme.lam, scheme.kappa,
                               scheme.p_big, scheme.delta_x, scheme.h, alpha,
                               float(horizon), a)
    absorbed = ext >= 0
    return JumpPath(ts, vs, scheme.kappa, float(horizon), alpha=alpha,
                    absorbed=bool(absorbed),
                    extinction_time=float(ext) if absorbed else None,
                    meta={"delta_x": delta_x, "eta": eta, "absorb": a})


def csbp_marginals(rng: RngStream, v: float, alpha: float, times, n_paths: int,
                   delta_x: float, *, eta: float = 10.0, absorb=None):
    """Values ``X_t`` at the sorted ``times`` for ``n_paths`` independent paths.

    Returns ``(values, n_events)`` with ``values`` of shape ``(n_paths, len(times))``.
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or np.any(times < 0):
        raise ValueError("times must be sorted and nonnegative")
    scheme = TruncationScheme.build(alpha, delta_x, eta)
    a = _resolve_absorb(scheme, absorb)
    return _grid_kernel(rng.generator, int(n_paths), float(v), scheme.lam,
                        scheme.kappa, scheme.p_big, scheme.delta_x, scheme.h,
                        alpha, times, a)


@numba.njit(cache=True)
def _flow_kernel(gen, vs, lam, kappa, p_big, dx, h, alpha, horizon, absorb):
    inv_a = -1.0 / alpha
    beta = alpha - 1.0
    m = vs.size
    X = vs.copy()
    snapped = X <= absorb
    death = np.full(m, np.inf)
    e_tail = gen.standard_exponential()  # shared, keeps death times ordered
    for j in range(m):
        if snapped[j] and X[j] > 0:
            death[j] = _tail_time(X[j], e_tail, beta)
    t = 0.0
    rec_t = [0.0]
    rec_x = [X.copy()]
    while True:
        top = X[m - 1]
        if snapped[m - 1]:
            break
        yend = top - kappa / lam * gen.standard_exponential()
        if yend <= absorb:
            dt = math.log(top / absorb) / kappa
        else:
            dt = math.log(top / yend) / kappa
        if t + dt >= horizon:
            break
        fac = math.exp(-kappa * dt)
        for j in range(m):
            if not snapped[j] and X[j] * fac <= absorb:
                tc = t + math.log(X[j] / absorb) / kappa
                snapped[j] = True
                death[j] = tc + _tail_time(absorb, e_tail, beta)
            X[j] *= fac
        t += dt
        if yend > absorb:
            w = gen.random()
            if w < p_big:
                jump = dx * (w / p_big) ** inv_a
            else:
                jump = h
            z = gen.random() * X[m - 1]
            for j in range(m):
                if not snapped[j] and z < X[j]:
                    X[j] += jump
        for j in range(m):
            if death[j] <= t:
                X[j] = 0.0
        rec_t.append(t)
        rec_x.append(X.copy())
    out = np.empty((len(rec_x), m))
    for i in range(len(rec_x)):
        out[i] = rec_x[i]
    return np.array(rec_t), out, death


def simulate_csbp_flow(rng: RngStream, vs, alpha: float, horizon: float,
                       delta_x: float, *, eta: float = 10.0, absorb=None):
    """Coupled paths ``v ↦ X_t(v)`` driven by one Poisson random measure.

    A jump at mark ``z`` is received by every path with ``z < X(v)``, the
    usual flow construction, so ``v₁ ≤ v₂`` gives ``X(v₁) ≤ X(v₂)`` pathwise.
    Returns ``(event_times, values, death_times)``; ``values[i, j]`` is the
    mass of path ``j`` after event ``i``.
    """
    vs = np.asarray(vs, dtype=float)
    if np.any(np.diff(vs) < 0) or np.any(vs < 0):
        raise ValueError("initial masses must be sorted and nonnegative")
    scheme = TruncationScheme.build(alpha, delta_x, eta)
    a = _resolve_absorb(scheme, absorb)
    return _flow_kernel(rng.generator, vs, scheme.lam, scheme.kappa, scheme.p_big,
                        scheme.delta_x, scheme.h, alpha, float(horizon), a)


# --- Feller diffusion (alpha = 2) -------------------------------------------------

def _feller_steps(gen, x, theta, n_steps, dt, record=None):
    sq = math.sqrt(2.0 * dt)
    for i in range(n_steps):
        noise = gen.standard_normal(x.shape)
        x = np.maximum(x + theta * dt + sq * np.sqrt(x) * noise, 0.0)
        if theta == 0.0:
            x[x <= 0.0] = 0.0
        if record is not None:
            record[i + 1] = x
    return x


def simulate_feller(rng: RngStream, v: float, theta: float, horizon: float,
                    dt: float) -> JumpPath:
    """Euler-Maruyama path of ``dX = sqrt(2X) dB + θ dt``, clamped at 0.

    The path is stored on the time grid and read as piecewise constant.
    """
    if v < 0 or theta < 0 or horizon <= 0 or dt <= 0:
        raise ValueError("need v, theta >= 0 and horizon, dt > 0")
    n = int(math.ceil(horizon / dt - 1e-9))
    dt = horizon / n
    rec = np.empty((n + 1, 1))
    rec[0] = v
    _feller_steps(rng.generator, np.array([float(v)]), theta, n, dt, rec)
    times = np.linspace(0.0, horizon, n + 1)
    vals = rec[:, 0]
    ext = None
    if theta == 0.0:
        zero = np.flatnonzero(vals == 0.0)
        if zero.size:
            ext = float(times[zero[0]])
    return JumpPath(times, vals, 0.0, horizon, alpha=2.0, absorbed=ext is not None,
                    extinction_time=ext, meta={"dt": dt})


def feller_marginals(rng: RngStream, v: float, theta: float, times, n_paths: int,
                     dt: float):
    """Euler-Maruyama values at the sorted ``times`` for ``n_paths`` paths."""
    times = np.asarray(times, dtype=float)
    x = np.full(int(n_paths), float(v))
    out = np.empty((int(n_paths), times.size))
    t = 0.0
    for k, tk in enumerate(times):
        n = int(math.ceil((tk - t) / dt - 1e-9))
        if n > 0:
            x = _feller_steps(rng.generator, x, theta, n, (tk - t) / n)
        t = tk
        out[:, k] = x
    return out


# --- integral of m^(1-α) along the flow ------------------------------------------
#
# With z = m^(α−1) the flow is z' = b − a z, a = (α−1)κ, b = (α−1)c, and
# ∫ m^(1−α) ds = ∫ ds / z has a closed form in each of four cases.

@numba.njit(cache=True)
def flow_inv_power_integral(z0, a, b, dt):
    """``∫_0^dt ds / z(s)`` for ``z' = b − a z``, ``z(0) = z0 > 0``."""
    if a == 0.0:
        if b == 0.0:
            return dt / z0
        return math.log1p(b * dt / z0) / b
    if b == 0.0:
        return math.expm1(a * dt) / (a * z0)
    # log1p/expm1 form avoids cancellation when b / a is small next to z0
    return math.log1p(b * math.expm1(a * dt) / (a * z0)) / b


@numba.njit(cache=True)
def flow_inv_power_inverse(z0, a, b, J):
    """The ``dt`` with ``flow_inv_power_integral(z0, a, b, dt) = J``."""
    if a == 0.0:
        if b == 0.0:
            return J * z0
        return math.expm1(b * J) * z0 / b
    if b == 0.0:
        return math.log1p(a * z0 * J) / a
    return math.log1p(a * z0 * math.expm1(b * J) / b) / a
