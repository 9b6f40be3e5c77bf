"""Measure-valued branching with interactive immigration, built from excursions.

Atom route (:func:`simulate_mbi`)
---------------------------------
Immigration candidates form a Poisson set in ``(s, u)`` with intensity
``ubar(δ) I(1) ds du``; a candidate is accepted when ``u ≤ g(Z_{s−}(1))``.
The ``u`` axis is cut into strips of width ``g0``.  Each strip is an
independent Poisson stream in ``s`` whose draws come from its own counter
based key, so a strip produces the same candidates whatever ``g`` is and
whenever it is switched on.  Strips above the current bound ``J g0`` are
idle; their candidates would be rejected anyway.  Whenever the mass grows so
that ``g(Z) > J g0`` the bound is doubled and the new strips are switched on
from that instant.  The result is exact thinning, and two runs with the same
key and ``g' ≤ g`` accept nested sets of atoms.

Every accepted atom becomes visible at age ``δ`` with a mass drawn from the
conditioned entrance law and then follows the truncated CSBP scheme, again
driven by its own counter stream.  The jump floor of an atom is chosen on a
dyadic ladder from its entrance mass, so the cost per atom does not blow up
for large atoms; the visible total mass is kept as one exponentially
decaying sum per ladder level.  On ``[0, δ)`` nothing is visible and the
total mass is taken to be ``F(1)``.

Type-bin route (:func:`simulate_type_bins`)
-------------------------------------------
For ``g(x) = θ x^(2−α)`` the masses ``X_t(v_k) − X_t(v_{k−1})`` of type
intervals are CSBPs with immigration ``θ (v_k − v_{k−1}) X_t(1)^(2−α)``,
driven by independent noise.  Simulating these few coordinates is exact in
law for ``v ↦ X_t(v)`` on the grid, needs no excursion cut-off, and uses a
jump floor proportional to the current total mass so cost per decade of mass
stays bounded.  This route serves the extinction dichotomy and the
Fleming-Viot time change.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .csbp import (JumpPath, TruncationScheme, flow_inv_power_integral,
                   flow_inv_power_inverse)
from .excursion import ExcursionTruncation, TypeLaw, entrance_law
from .rng import RngStream, c_alpha, counter_uniform, derive_key
from scipy.special import gamma as gamma_fn

__all__ = [
    "ImmigrationG",
    "AtomicMeasure",
    "MbiState",
    "simulate_mbi",
    "snapshot_measure",
    "count_atoms",
    "extinction_time",
    "TypeBinPath",
    "simulate_type_bins",
    "kappa_s",
]

G_CONSTANT, G_POWER, G_TABLE = 0, 1, 2


def kappa_s(alpha: float) -> float:
    """Constant ``α(α−1)Γ(α)`` of the Fleming-Viot time change."""
    return alpha * (alpha - 1.0) * float(gamma_fn(alpha))


@dataclass(frozen=True)
class ImmigrationG:
    """Nondecreasing continuous immigration rate ``g``.

    ``kind`` is ``"constant"`` (``θ``), ``"power"`` (``θ x^(2−α)``) or
    ``"table"`` (piecewise linear through ``(xs, gs)``, flat past the ends).
    """
    kind: str
    theta: float = 0.0
    alpha: float = 1.5
    xs: tuple = ()
    gs: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "power", "table"):
            raise ValueError(f"unknown immigration kind {self.kind!r}")
        if self.theta < 0:
            raise ValueError("theta must be nonnegative")
        if self.kind == "table":
            xs, gs = np.asarray(self.xs, float), np.asarray(self.gs, float)
            if xs.size < 2 or xs.size != gs.size or np.any(np.diff(xs) <= 0):
                raise ValueError("table needs increasing xs and matching gs")
            if np.any(np.diff(gs) < 0) or np.any(gs < 0):
                raise ValueError("table g must be nonnegative and nondecreasing")

    @classmethod
    def constant(cls, theta):
        return cls("constant", theta)

    @classmethod
    def power(cls, theta, alpha):
        return cls("power", theta, alpha)

    @classmethod
    def table(cls, xs, gs):
        return cls("table", 0.0, 1.5, tuple(map(float, xs)), tuple(map(float, gs)))

    @property
    def code(self) -> int:
        return {"constant": G_CONSTANT, "power": G_POWER, "table": G_TABLE}[self.kind]

    def arrays(self):
        if self.kind == "table":
            return np.asarray(self.xs, float), np.asarray(self.gs, float)
        return np.zeros(1), np.zeros(1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            out = np.full(x.shape, self.theta)
        elif self.kind == "power":
            out = self.theta * x ** (2.0 - self.alpha)
        else:
            out = np.interp(x, self.xs, self.gs)
        return out[()] if out.ndim == 0 else out


@numba.njit(cache=True)
def _g_eval(code, theta, alpha, x, tx, tg):
    if code == 0:
        return theta
    if code == 1:
        return theta * x ** (2.0 - alpha)
    return np.interp(x, tx, tg)


# --- a small binary heap keyed by time -------------------------------------------

@numba.njit(cache=True)
def _heap_push(ht, hk, hi, n, t, k, i):
    if n == ht.size:
        ht2 = np.empty(2 * n)
        hk2 = np.empty(2 * n, np.int64)
        hi2 = np.empty(2 * n, np.int64)
        ht2[:n] = ht
        hk2[:n] = hk
        hi2[:n] = hi
        ht, hk, hi = ht2, hk2, hi2
    j = n
    while j > 0:
        p = (j - 1) >> 1
        if ht[p] <= t:
            break
        ht[j] = ht[p]
        hk[j] = hk[p]
        hi[j] = hi[p]
        j = p
    ht[j] = t
    hk[j] = k
    hi[j] = i
    return ht, hk, hi, n + 1


@numba.njit(cache=True)
def _heap_pop(ht, hk, hi, n):
    t0, k0, i0 = ht[0], hk[0], hi[0]
    n -= 1
    t, k, i = ht[n], hk[n], hi[n]
    j = 0
    while True:
        c = 2 * j + 1
        if c >= n:
            break
        if c + 1 < n and ht[c + 1] < ht[c]:
            c += 1
        if ht[c] >= t:
            break
        ht[j] = ht[c]
        hk[j] = hk[c]
        hi[j] = hi[c]
        j = c
    if n > 0:
        ht[j] = t
        hk[j] = k
        hi[j] = i
    return t0, k0, i0, n


@numba.njit(cache=True)
def _grow(a, n):
    if n < a.size:
        return a
    b = np.empty(2 * a.size, a.dtype)
    b[:a.size] = a
    return b


# event kinds
_EV_CAND, _EV_ENTRY, _EV_MOVE, _EV_DEATH = 0, 1, 2, 3
# atom status
_ST_PENDING, _ST_ALIVE, _ST_SNAPPED, _ST_DEAD = 0, 1, 2, 3


@numba.njit(cache=True)
def _atom_exp(keys, ctr, i):
    u = counter_uniform(keys[i], ctr[i])
    ctr[i] += 1
    return -math.log(u)


@numba.njit(cache=True)
def _atom_next(keys, ctr, i, y, t, lam, kappa, absorb, pend):
    """Schedule the next scheme event of atom ``i`` holding mass ``y`` at ``t``.

    Between events the mass decays at rate ``κ``; in the Lamperti clock the
    events are a Poisson stream of rate ``λ``, so the next event comes when
    the mass has lost ``κ E / λ``.  Reaching the snap level first is recorded
    as ``pend = −1``.
    """
    yend = y - kappa / lam * _atom_exp(keys, ctr, i)
    if yend <= absorb:
        pend[i] = -1.0
        return t + math.log(y / absorb) / kappa
    pend[i] = yend
    return t + math.log(y / yend) / kappa


@numba.njit(cache=True)
def _level_mass(Ml, kap, cnt, s):
    tot = 0.0
    for l in range(Ml.size):
        if cnt[l] > 0:
            tot += Ml[l] * math.exp(-kap[l] * s)
    return tot


_GL_X = np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GL_W = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


@numba.njit(cache=True)
def _level_integral(Ml, kap, cnt, beta, a, b):
    """``∫_a^b (Σ_l M_l e^{−κ_l s})^(−β) ds`` by composite Gauss-Legendre."""
    if b <= a:
        return 0.0
    kmax = 0.0
    for l in range(Ml.size):
        if cnt[l] > 0 and kap[l] > kmax:
            kmax = kap[l]
    n = min(256, 1 + int((b - a) * kmax * beta / 0.25))
    hw = 0.5 * (b - a) / n
    tot = 0.0
    for k in range(n):
        mid = a + (2 * k + 1) * hw
        for q in range(3):
            tot += _GL_W[q] * _level_mass(Ml, kap, cnt, mid + hw * _GL_X[q]) ** (-beta)
    return tot * hw


@numba.njit(cache=True)
def _advance_s(t_ref, t, Ml, kap, cnt, n_lv, F1, delta, beta, kS, S, s_stop):
    """Add ``κ_S ∫ X^(1−α)`` over ``[t_ref, t]``; returns ``(S, crossing time or −1)``.

    On ``[0, δ)`` the mass is frozen at ``F(1)``.  Afterwards the visible
    mass is a sum of exponentials, one per occupied level; with a single
    level the integral is closed-form, otherwise it uses quadrature and the
    crossing is found by bisection.
    """
    if t_ref < delta and F1 > 0:
        rate = kS * F1 ** (-beta)
        seg = min(t, delta) - t_ref
        if seg > 0:
            if S + rate * seg >= s_stop:
                return s_stop, t_ref + (s_stop - S) / rate
            S += rate * seg
    lo = max(t_ref, delta)
    if n_lv == 0 or t <= lo:
        return S, -1.0
    s0 = lo - t_ref
    s1 = t - t_ref
    if n_lv == 1:
        for l in range(Ml.size):
            if cnt[l] > 0:
                z0 = (Ml[l] * math.exp(-kap[l] * s0)) ** beta
                a = beta * kap[l]
                dS = kS * flow_inv_power_integral(z0, a, 0.0, s1 - s0)
                if S + dS >= s_stop:
                    return s_stop, lo + flow_inv_power_inverse(z0, a, 0.0,
                                                               (s_stop - S) / kS)
                return S + dS, -1.0
    dS = kS * _level_integral(Ml, kap, cnt, beta, s0, s1)
    if S + dS < s_stop:
        return S + dS, -1.0
    need = (s_stop - S) / kS
    x0, x1 = s0, s1
    for _ in range(60):
        xm = 0.5 * (x0 + x1)
        if _level_integral(Ml, kap, cnt, beta, s0, xm) < need:
            x0 = xm
        else:
            x1 = xm
    return s_stop, t_ref + 0.5 * (x0 + x1)


@numba.njit(cache=True)
def _new_atom(na, keys, ctr, birth, mark, typ, entr, mass, tl, pend, status, death,
              strip_of, lvl, lvl0):
    if na == keys.size:
        keys = _grow(keys, na); ctr = _grow(ctr, na); birth = _grow(birth, na)
        mark = _grow(mark, na); typ = _grow(typ, na); entr = _grow(entr, na)
        mass = _grow(mass, na); tl = _grow(tl, na); pend = _grow(pend, na)
        status = _grow(status, na); death = _grow(death, na)
        strip_of = _grow(strip_of, na); lvl = _grow(lvl, na); lvl0 = _grow(lvl0, na)
    ctr[na] = 0
    status[na] = _ST_PENDING
    death[na] = np.inf
    entr[na] = np.nan
    typ[na] = np.nan
    mass[na] = 0.0
    lvl[na] = -1
    return (keys, ctr, birth, mark, typ, entr, mass, tl, pend, status, death, strip_of, lvl,
            lvl0)


@numba.njit(cache=True)
def _mbi_kernel(key, alpha, delta, horizon, q, F1, I1, gcode, theta, tx, tg, g0, J0,
                lv_lam, lv_kap, lv_pbig, lv_dx, lv_h, lv_abs, log2_dx0, rel,
                tab_e, tab_lx, small_coef, escale, kS, s_stop, resum_every):
    beta = alpha - 1.0
    inv_a = -1.0 / alpha
    NL = lv_lam.size
    cap = 1024
    keys = np.empty(cap, np.uint64)
    ctr = np.zeros(cap, np.int64)
    birth = np.empty(cap)
    mark = np.empty(cap)
    typ = np.empty(cap)
    entr = np.empty(cap)
    mass = np.zeros(cap)     # mass right after the atom's last event, at time tl
    tl = np.zeros(cap)
    pend = np.zeros(cap)
    status = np.zeros(cap, np.int64)
    death = np.full(cap, np.inf)
    strip_of = np.empty(cap, np.int64)
    lvl = np.empty(cap, np.int64)
    lvl0 = np.empty(cap, np.int64)
    na = 0
    n_relevel = 0
    lcap = 4096
    lt = np.empty(lcap)
    la = np.empty(lcap, np.int64)
    lm = np.empty(lcap)
    ltot = np.empty(lcap)
    lkb = np.empty(lcap)
    llv = np.empty(lcap, np.int64)
    nl = 0
    ht = np.empty(1024)
    hk = np.empty(1024, np.int64)
    hi = np.empty(1024, np.int64)
    nh = 0
    scap = 64
    s_next = np.full(scap, np.inf)
    s_ctr = np.zeros(scap, np.int64)
    s_key = np.empty(scap, np.uint64)
    strip_root = derive_key(key, 1)
    J = 0
    rate_strip = q * I1 * g0
    n_breach = 0
    Ml = np.zeros(NL)          # visible mass per level at time t_ref
    cnt = np.zeros(NL, np.int64)
    n_lv = 0

    # initial atoms: Poisson(q F(1)) of them, all entering at age δ
    init_key = derive_key(key, 2)
    if F1 > 0:
        c0 = 0
        acc = -math.log(counter_uniform(init_key, c0)) / (F1 * q)
        c0 += 1
        while acc <= 1.0:
            (keys, ctr, birth, mark, typ, entr, mass, tl, pend, status, death, strip_of,
             lvl, lvl0) = _new_atom(na, keys, ctr, birth, mark, typ, entr, mass, tl, pend,
                                    status, death, strip_of, lvl, lvl0)
            keys[na] = derive_key(init_key, na + 7)
            birth[na] = 0.0
            mark[na] = 0.0
            strip_of[na] = -1
            na += 1
            acc += -math.log(counter_uniform(init_key, c0)) / (F1 * q)
            c0 += 1
    if delta <= horizon:
        for i in range(na):
            ht, hk, hi, nh = _heap_push(ht, hk, hi, nh, delta, _EV_ENTRY, i)

    for j in range(J0):
        if J == s_key.size:
            old_n = s_key.size
            s_next = _grow(s_next, J); s_ctr = _grow(s_ctr, J); s_key = _grow(s_key, J)
            s_next[old_n:] = np.inf
        s_key[J] = derive_key(strip_root, J)
        s_ctr[J] = 0
        if rate_strip > 0:
            s_next[J] = -math.log(counter_uniform(s_key[J], 0)) / rate_strip
            s_ctr[J] = 2
            if s_next[J] <= horizon:
                ht, hk, hi, nh = _heap_push(ht, hk, hi, nh, s_next[J], _EV_CAND, J)
        J += 1

    M = 0.0
    t_ref = 0.0
    n_vis = 0
    n_pend = na
    S = 0.0
    ext = -1.0
    t_stop = horizon
    n_ev = 0
    g_zero = _g_eval(gcode, theta, alpha, 0.0, tx, tg)
    while nh > 0:
        t, kind, idx, nh = _heap_pop(ht, hk, hi, nh)
        if t > horizon:
            break
        S, tc = _advance_s(t_ref, t, Ml, lv_kap, cnt, n_lv, F1, delta, beta, kS, S, s_stop)
        if tc >= 0.0:
            t_stop = tc
            break
        if t > t_ref:
            if n_lv > 0:
                M = 0.0
                for l in range(NL):
                    if cnt[l] > 0:
                        Ml[l] *= math.exp(-lv_kap[l] * (t - t_ref))
                        M += Ml[l]
            t_ref = t
        n_ev += 1
        record = False
        aid = -1
        if kind == _EV_CAND:
            j = idx
            u = (j + counter_uniform(s_key[j], s_ctr[j] - 1)) * g0
            k_local = s_ctr[j] // 2 - 1
            Z = F1 if t < delta else M
            if u <= _g_eval(gcode, theta, alpha, Z, tx, tg):
                (keys, ctr, birth, mark, typ, entr, mass, tl, pend, status, death, strip_of,
                 lvl, lvl0) = _new_atom(na, keys, ctr, birth, mark, typ, entr, mass, tl,
                                        pend, status, death, strip_of, lvl, lvl0)
                keys[na] = derive_key(s_key[j], k_local + 7)
                birth[na] = t
                mark[na] = u
                strip_of[na] = j
                if t + delta <= horizon:
                    ht, hk, hi, nh = _heap_push(ht, hk, hi, nh, t + delta, _EV_ENTRY, na)
                na += 1
                n_pend += 1
            gap = -math.log(counter_uniform(s_key[j], s_ctr[j]))
            s_ctr[j] += 2
            s_next[j] = t + gap / rate_strip
            if s_next[j] <= horizon:
                ht, hk, hi, nh = _heap_push(ht, hk, hi, nh, s_next[j], _EV_CAND, j)
        elif kind == _EV_ENTRY:
            i = idx
            typ[i] = counter_uniform(keys[i], 0)
            e = -math.log(counter_uniform(keys[i], 1))
            ctr[i] = 2
            if e < tab_e[0]:
                w = (-math.expm1(-e) / small_coef) ** (1.0 / beta)
            elif e > tab_e[-1]:
                w = math.exp(tab_lx[-1] + (e - tab_e[-1]) / alpha)
            else:
                w = math.exp(np.interp(e, tab_e, tab_lx))
            w *= escale
            l = int(math.floor(math.log2(rel * w) - log2_dx0 + 0.5))
            l = min(max(l, 0), NL - 1)
            lvl[i] = l
            lvl0[i] = l
            entr[i] = w
            mass[i] = w
            tl[i] = t
            Ml[l] += w
            M += w
            if cnt[l] == 0:
                n_lv += 1
            cnt[l] += 1
            n_vis += 1
            n_pend -= 1
            aid = i
            record = True
            if w <= lv_abs[l]:
                status[i] = _ST_SNAPPED
                tau = t + (w / _atom_exp(keys, ctr, i)) ** beta / beta
                death[i] = tau
                if tau <= horizon:
                    ht, hk, hi, nh = _heap_push(ht, hk, hi, nh, tau, _EV_DEATH, i)
            else:
                status[i] = _ST_ALIVE
                tn = _atom_next(keys, ctr, i, w, t, lv_lam[l], lv_kap[l], lv_abs[l], pend)
                if tn <= horizon:
                    ht, hk, hi, nh = _heap_push(ht, hk, hi, nh, tn, _EV_MOVE, i)
        elif kind == _EV_MOVE:
            i = idx
            l = lvl[i]
            aid = i
            record = True
            if pend[i] < 0.0:
                # snap: the residual mass decays until an exactly sampled death time
                status[i] = _ST_SNAPPED
                mass[i] = lv_abs[l]
                tl[i] = t
                tau = t + (lv_abs[l] / _atom_exp(keys, ctr, i)) ** beta / beta
                death[i] = tau
                if tau <= horizon:
                    ht, hk, hi, nh = _heap_push(ht, hk, hi, nh, tau, _EV_DEATH, i)
            else:
                wdraw = counter_uniform(keys[i], ctr[i])
                ctr[i] += 1
                if wdraw < lv_pbig[l]:
                    jump = lv_dx[l] * (wdraw / lv_pbig[l]) ** inv_a
                else:
                    jump = lv_h[l]
                y = pend[i] + jump
                Ml[l] += jump
                M += jump
                # follow the atom's scale, never dropping below its entry level
                l2 = int(math.floor(math.log2(rel * y) - log2_dx0 + 0.5))
                l2 = min(max(l2, lvl0[i]), NL - 1)
                if l2 - l >= 2 or (l - l2 >= 2):
                    Ml[l] -= y
                    cnt[l] -= 1
                    if cnt[l] == 0:
                        Ml[l] = 0.0
                        n_lv -= 1
                    if cnt[l2] == 0:
                        n_lv += 1
                    cnt[l2] += 1
                    Ml[l2] += y
                    lvl[i] = l2
                    l = l2
                    n_relevel += 1
                mass[i] = y
                tl[i] = t
                tn = _atom_next(keys, ctr, i, y, t, lv_lam[l], lv_kap[l], lv_abs[l], pend)
                if tn <= horizon:
                    ht, hk, hi, nh = _heap_push(ht, hk, hi, nh, tn, _EV_MOVE, i)
        else:
            i = idx
            l = lvl[i]
            aid = i
            record = True
            gone = mass[i] * math.exp(-lv_kap[l] * (t - tl[i]))
            Ml[l] -= gone
            M -= gone
            mass[i] = 0.0
            tl[i] = t
            status[i] = _ST_DEAD
            cnt[l] -= 1
            if cnt[l] == 0:
                Ml[l] = 0.0
                n_lv -= 1
            n_vis -= 1
        if n_vis == 0:
            M = 0.0
        elif n_ev % resum_every == 0 or M < 0.0:
            # wipe accumulated rounding
            Ml[:] = 0.0
            for a_ in range(na):
                if status[a_] == _ST_ALIVE or status[a_] == _ST_SNAPPED:
                    Ml[lvl[a_]] += mass[a_] * math.exp(-lv_kap[lvl[a_]] * (t - tl[a_]))
            M = Ml.sum()
        if record:
            lt = _grow(lt, nl); la = _grow(la, nl); lm = _grow(lm, nl)
            ltot = _grow(ltot, nl); lkb = _grow(lkb, nl); llv = _grow(llv, nl)
            lt[nl] = t
            la[nl] = aid
            lm[nl] = mass[aid]
            ltot[nl] = M
            kb = 0.0
            if M > 0.0:
                for l in range(NL):
                    if cnt[l] > 0:
                        kb += lv_kap[l] * Ml[l]
                kb /= M
            lkb[nl] = kb
            llv[nl] = lvl[aid]
            nl += 1
        # switch on more strips when g at the current mass exceeds the covered band
        if M > 0.0:
            gv = _g_eval(gcode, theta, alpha, M, tx, tg)
            if gv > J * g0:
                n_breach += 1
                newJ = max(2 * J, 1)
                while newJ * g0 < gv:
                    newJ *= 2
                for j in range(J, newJ):
                    if j >= s_key.size:
                        old_n = s_key.size
                        s_next = _grow(s_next, j); s_ctr = _grow(s_ctr, j)
                        s_key = _grow(s_key, j)
                        s_next[old_n:] = np.inf
                    s_key[j] = derive_key(strip_root, j)
                    # replay the strip from time 0 and keep the arrivals after t
                    tt = -math.log(counter_uniform(s_key[j], 0)) / rate_strip
                    c = 2
                    while tt <= t:
                        tt += -math.log(counter_uniform(s_key[j], c)) / rate_strip
                        c += 2
                    s_next[j] = tt
                    s_ctr[j] = c
                    if tt <= horizon:
                        ht, hk, hi, nh = _heap_push(ht, hk, hi, nh, tt, _EV_CAND, j)
                J = newJ
        if n_vis == 0 and n_pend == 0 and t >= delta and g_zero == 0.0:
            ext = t
            t_stop = t
            break
    if ext < 0.0 and S < s_stop:
        S, tc = _advance_s(t_ref, horizon, Ml, lv_kap, cnt, n_lv, F1, delta, beta, kS, S,
                           s_stop)
        t_stop = horizon if tc < 0.0 else tc
    return (birth[:na].copy(), mark[:na].copy(), typ[:na].copy(), entr[:na].copy(),
            death[:na].copy(), strip_of[:na].copy(), status[:na].copy(),
            lt[:nl].copy(), la[:nl].copy(), lm[:nl].copy(), ltot[:nl].copy(),
            lkb[:nl].copy(), llv[:nl].copy(), ext, t_stop, S, n_breach, J, n_ev, n_relevel)


# --- Python-side objects -------------------------------------------------------------

@dataclass
class AtomicMeasure:
    """Finite purely atomic measure on ``[0, 1]``."""
    locations: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        order = np.argsort(self.locations, kind="stable")
        self.locations = self.locations[order]
        self.masses = self.masses[order]

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def __len__(self):
        return self.locations.size

    def cdf(self, v):
        """``v ↦ measure([0, v])``, right-continuous."""
        csum = np.concatenate([[0.0], np.cumsum(self.masses)])
        return csum[np.searchsorted(self.locations, np.asarray(v, float), side="right")]

    def normalized(self) -> "AtomicMeasure":
        tot = self.total
        if tot <= 0:
            raise ValueError("cannot normalise the zero measure")
        return AtomicMeasure(self.locations, self.masses / tot)


@dataclass
class MbiState:
    """Full record of one atom-route run; queried at any time in ``[δ, t_stop]``.

    Atoms are indexed in creation order.  ``strip`` is ``−1`` for atoms of
    the initial measure and otherwise the strip the immigrant came from;
    ``(strip, mark, birth)`` identifies an immigrant across coupled runs.
    """
    alpha: float
    delta_age: float
    horizon: float
    t_stop: float
    F1: float
    g: ImmigrationG
    birth: np.ndarray
    mark: np.ndarray
    location: np.ndarray
    entrance: np.ndarray
    death: np.ndarray
    strip: np.ndarray
    level_kappa: np.ndarray
    log_time: np.ndarray
    log_atom: np.ndarray
    log_mass: np.ndarray
    log_total: np.ndarray
    log_kappa: np.ndarray
    log_level: np.ndarray
    extinction: float | None
    time_change_total: float
    n_breaches: int
    n_strips: int
    n_events: int
    meta: dict = field(default_factory=dict)

    def _check_time(self, t):
        if t < 0 or t > self.t_stop + 1e-12:
            raise ValueError(f"t={t} outside the simulated range [0, {self.t_stop}]")

    def atom_masses(self, t: float) -> np.ndarray:
        """Masses of all table atoms at time ``t`` (zero if not yet visible or dead)."""
        self._check_time(t)
        if t < self.delta_age:
            raise ValueError("atom masses below the entrance age are not represented")
        out = np.zeros(self.birth.size)
        k = np.searchsorted(self.log_time, t, side="right")
        if k == 0:
            return out
        # last log entry of each atom up to t
        rev = self.log_atom[:k][::-1]
        uniq, first = np.unique(rev, return_index=True)
        last = k - 1 - first
        kap = self.level_kappa[self.log_level[last]]
        out[uniq] = self.log_mass[last] * np.exp(-kap * (t - self.log_time[last]))
        out[self.death <= t] = 0.0
        return out

    def total_mass(self, t: float) -> float:
        """Visible ``X_t(1)``; equal to ``F(1)`` on ``[0, δ)``."""
        self._check_time(t)
        if t < self.delta_age:
            return self.F1
        return float(self.atom_masses(t).sum())

    def total_mass_path(self) -> JumpPath:
        """Visible ``X_t(1)`` as a path.

        Between events the true path is a sum of exponentials, one per jump
        floor level; the returned path uses the mass-weighted mean decay
        rate, which matches it to first order.  Use :meth:`total_mass` for
        exact values.
        """
        times, vals, kap = [0.0], [self.F1], [0.0]
        lt, tot, kb = self.log_time, self.log_total, self.log_kappa
        if lt.size:
            # several events can share a time (all initial atoms enter at δ)
            last = np.append(np.diff(lt) > 0, True)
            lt, tot, kb = lt[last], tot[last], kb[last]
        if self.delta_age <= self.t_stop and (lt.size == 0 or lt[0] > self.delta_age):
            times.append(self.delta_age)
            vals.append(0.0)
            kap.append(0.0)
        times.extend(lt.tolist())
        vals.extend(tot.tolist())
        kap.extend(kb.tolist())
        times = np.array(times)
        return JumpPath(times, np.maximum(vals, 0.0), kap, max(self.t_stop, times[-1]),
                        alpha=self.alpha, absorbed=self.extinction is not None,
                        extinction_time=self.extinction)


def _level_table(alpha, dx0, n_levels, eta):
    rows = [TruncationScheme.build(alpha, dx0 * 2.0**l, eta) for l in range(n_levels)]
    lam = np.array([r.lam for r in rows])
    kap = np.array([r.kappa for r in rows])
    pbig = np.array([r.p_big for r in rows])
    dx = np.array([r.delta_x for r in rows])
    h = np.array([r.h for r in rows])
    return lam, kap, pbig, dx, h


def simulate_mbi(rng: RngStream, g: ImmigrationG, alpha: float, horizon: float,
                 trunc: ExcursionTruncation, *, F: TypeLaw = TypeLaw(),
                 I: TypeLaw = TypeLaw(), rel_delta_x: float = 1.0, eta: float = 10.0,
                 rel_absorb: float = 1e-3, strip_width: float | None = None,
                 key: int | None = None, s_stop: float = math.inf) -> MbiState:
    """Atom-level simulation of the flow ``Z_t(v)`` with interactive immigration.

    Each atom gets its own jump floor ``δ_x``, the power of two nearest to
    ``rel_delta_x`` times its entrance mass, and snaps at ``rel_absorb δ_x``.
    When a jump moves its mass two or more levels away, the floor follows
    (never below the entry level).
    The scheme is compensated, so the floor changes the law only at scales
    below it and leaves the mean exact.

    Two runs with the same ``key`` and ``strip_width`` share their candidate
    atoms and every atom's noise; with ``g' ≤ g`` the smaller run accepts a
    subset of the atoms.  ``s_stop`` ends the run once ``κ_S ∫ X^(1−α)``
    reaches it.
    """
    if trunc.mode != "by_age":
        raise ValueError("the atom route needs by_age truncation")
    if not 1.0 < alpha < 2.0:
        raise ValueError("alpha must lie in (1, 2)")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if g.kind == "power" and g.alpha != alpha:
        raise ValueError("power immigration must use the same alpha")
    delta = trunc.delta
    beta = alpha - 1.0
    escale = (beta * delta) ** (1.0 / beta)
    # 48 dyadic levels centred on the typical entrance mass
    n_levels = 48
    dx0 = rel_delta_x * escale * 2.0**-24
    lam, kap, pbig, dx, h = _level_table(alpha, dx0, n_levels, eta)
    g_top = float(g(F.mass + 4.0))
    if strip_width is None:
        strip_width = g_top / 4.0 if g_top > 0 else 1.0
    J0 = max(1, int(math.ceil(g_top / strip_width - 1e-12)))
    law = entrance_law(alpha)
    tx, tg = g.arrays()
    if key is None:
        key = int(rng.uint64())
    q = (beta * delta) ** (-1.0 / beta)
    (birth, mark, typ, entr, death, strip, status, lt, la, lm, ltot, lkb, llv,
     ext, t_stop, S, n_breach, J, n_ev, n_relevel) = _mbi_kernel(
        np.uint64(key), alpha, delta, float(horizon), q, F.mass, I.mass, g.code, g.theta,
        tx, tg, float(strip_width), J0, lam, kap, pbig, dx, h, rel_absorb * dx,
        math.log2(dx0), rel_delta_x, law.neg_log_s, law.log_x, law.small_coef, escale,
        kappa_s(alpha), float(s_stop), 4096)
    entered = status != _ST_PENDING
    loc = np.full(birth.size, np.nan)
    init = entered & (strip < 0)
    imm = entered & (strip >= 0)
    if init.any():
        loc[init] = F.sample(typ[init])
    if imm.any():
        loc[imm] = I.sample(typ[imm])
    return MbiState(alpha, delta, float(horizon), float(t_stop), F.mass, g, birth, mark,
                    loc, entr, death, strip, kap, lt, la, lm, ltot, lkb, llv,
                    None if ext < 0 else float(ext), float(S), int(n_breach), int(J),
                    int(n_ev),
                    meta={"rel_delta_x": rel_delta_x, "strip_width": strip_width,
                          "key": int(key), "n_relevel": int(n_relevel)})


def snapshot_measure(state: MbiState, t: float) -> AtomicMeasure:
    """Alive atoms at ``t`` as ``(type location, mass)`` pairs."""
    m = state.atom_masses(t)
    alive = m > 0
    return AtomicMeasure(state.location[alive], m[alive])


def count_atoms(state: MbiState, t: float, mass_floor: float = 0.0) -> int:
    """Number of alive atoms at ``t`` with mass above ``mass_floor``."""
    if state.birth.size == 0:
        return 0
    return int(np.count_nonzero(state.atom_masses(t) > mass_floor))


def extinction_time(state) -> float | None:
    """First time the total mass is zero, or ``None`` if not reached by the horizon."""
    if isinstance(state, (MbiState, TypeBinPath)):
        return state.extinction if isinstance(state, MbiState) else state.extinction_time
    return state.extinction_time


# --- type-bin route --------------------------------------------------------------------

@numba.njit(cache=True)
def _scheme_rates(alpha, c, d, eta):
    lam_big = c * d ** (-alpha) / alpha
    kap = c * d ** (1.0 - alpha) / (alpha - 1.0)
    h = eta * d
    r = c * d ** (2.0 - alpha) / (2.0 - alpha) / (h * h)
    return lam_big + r, kap + r * h, lam_big / (lam_big + r), h


@numba.njit(cache=True)
def _bins_kernel(gen, m0, w, theta, alpha, c, rel, eta, horizon, absorb, targets, kS,
                 record):
    beta = alpha - 1.0
    inv_a = -1.0 / alpha
    nb = m0.size
    m = m0.copy()
    M = m.sum()
    nT = targets.size
    snaps = np.full((nT, nb), np.nan)
    t_of = np.full(nT, np.nan)
    k = 0
    t = 0.0
    S = 0.0
    ext = -1.0
    x_ref = M
    lam, kappa, p_big, h = _scheme_rates(alpha, c, rel * x_ref, eta)
    rec_t = [0.0]
    rec_m = [M]
    rec_k = [kappa]
    n_ev = 0
    z_abs = absorb ** beta
    while M > 0.0:
        a = beta * kappa
        b = beta * theta
        z0 = M ** beta
        if theta > 0.0:
            m_star = (theta / kappa) ** (1.0 / beta)
            bound = max(M, m_star)
        else:
            bound = M
        dt = gen.standard_exponential() / (lam * bound)
        t_end = min(t + dt, horizon)
        seg = t_end - t
        # time change over the segment and any Fleming-Viot targets inside it
        dS = kS * flow_inv_power_integral(z0, a, b, seg)
        while k < nT and S + dS >= targets[k]:
            dk = flow_inv_power_inverse(z0, a, b, (targets[k] - S) / kS)
            dk = min(max(dk, 0.0), seg)
            if b == 0.0:
                Mk = M * math.exp(-kappa * dk)
                ek = math.exp(-kappa * dk)
            else:
                zk = (b / a) + (z0 - b / a) * math.exp(-a * dk) if a > 0 else z0 + b * dk
                Mk = zk ** (1.0 / beta)
                ek = math.exp(-kappa * dk)
            for j in range(nb):
                snaps[k, j] = m[j] * ek + w[j] * (Mk - M * ek)
            t_of[k] = t + dk
            k += 1
        # extinction inside the segment
        if b == 0.0:
            z_end = z0 * math.exp(-a * seg)
        elif a > 0.0:
            z_end = b / a + (z0 - b / a) * math.exp(-a * seg)
        else:
            z_end = z0 + b * seg
        if z_end <= z_abs:
            if b == 0.0:
                dc = math.log(z0 / z_abs) / a
            else:
                dc = math.log((z0 - b / a) / (z_abs - b / a)) / a
            ext = t + dc
            S += kS * flow_inv_power_integral(z0, a, b, dc)
            t = ext
            M = 0.0
            for j in range(nb):
                m[j] = 0.0
            if record:
                rec_t.append(t)
                rec_m.append(0.0)
                rec_k.append(0.0)
            break
        S += dS
        if nT > 0 and k == nT:
            t = t + seg
            break
        e = math.exp(-kappa * seg)
        Mn = z_end ** (1.0 / beta)
        for j in range(nb):
            m[j] = m[j] * e + w[j] * (Mn - M * e)
        M = Mn
        t = t_end
        if t >= horizon:
            break
        n_ev += 1
        if gen.random() * bound < M:
            u = gen.random()
            if u < p_big:
                jump = rel * x_ref * (u / p_big) ** inv_a
            else:
                jump = h
            z = gen.random() * M
            acc = 0.0
            jb = nb - 1
            for j in range(nb):
                acc += m[j]
                if z < acc:
                    jb = j
                    break
            m[jb] += jump
            M += jump
        if M > 2.0 * x_ref or M < 0.5 * x_ref:
            x_ref = M
            lam, kappa, p_big, h = _scheme_rates(alpha, c, rel * x_ref, eta)
        if record:
            rec_t.append(t)
            rec_m.append(M)
            rec_k.append(kappa)
    return (snaps, t_of, ext, t, S, n_ev, np.array(rec_t), np.array(rec_m),
            np.array(rec_k))


@dataclass
class TypeBinPath:
    """Output of the type-bin route."""
    v_grid: np.ndarray
    fv_times: np.ndarray
    cumulative: np.ndarray     # normalised X(v_k)/X(1) at each Fleming-Viot time
    real_times: np.ndarray     # S^{-1}(fv_time); nan if not reached
    bin_masses: np.ndarray
    extinction_time: float | None
    t_end: float
    time_change_total: float
    n_events: int
    mass_path: JumpPath | None = None


def simulate_type_bins(rng: RngStream, theta: float, alpha: float, horizon: float, *,
                       v_grid=(1.0,), F: TypeLaw = TypeLaw(), I1: float = 1.0,
                       fv_times=(), rel_delta=0.01, eta: float = 10.0,
                       absorb: float = 1e-12, record: bool = False) -> TypeBinPath:
    """Masses of the type intervals cut at ``v_grid`` for ``g(x) = θ x^(2−α)``.

    ``F`` and ``I`` are uniform on ``[0, 1]`` (masses ``F.mass`` and ``I1``).
    The jump floor is ``rel_delta`` times a reference mass reset whenever the
    total mass leaves ``[x_ref/2, 2 x_ref]``.  The total mass is declared
    extinct when it reaches ``absorb``.  Fleming-Viot times in ``fv_times``
    are located exactly through the closed-form time change.
    """
    if F.quantile is not None:
        raise ValueError("the type-bin route assumes uniform type laws")
    v = np.asarray(v_grid, dtype=float)
    if v.size == 0 or v[-1] != 1.0 or np.any(np.diff(v) <= 0) or v[0] <= 0:
        raise ValueError("v_grid must be increasing in (0, 1] and end at 1")
    if not 1.0 < alpha < 2.0 or horizon <= 0 or theta < 0:
        raise ValueError("bad parameters")
    widths = np.diff(np.concatenate([[0.0], v]))
    m0 = F.mass * widths
    w = widths * 1.0  # share of immigration per bin; total immigration θ I1 X^(2-α)
    targets = np.asarray(fv_times, dtype=float)
    if np.any(np.diff(targets) < 0):
        raise ValueError("fv_times must be sorted")
    snaps, t_of, ext, t_end, S, n_ev, rt, rm, rk = _bins_kernel(
        rng.generator, m0, w, theta * I1, alpha, c_alpha(alpha), rel_delta, eta,
        float(horizon), absorb, targets, kappa_s(alpha), record)
    snaps = np.maximum(snaps, 0.0)
    with np.errstate(invalid="ignore"):
        cum = np.cumsum(snaps, axis=1) / snaps.sum(axis=1, keepdims=True)
    # Y(1) = 1 by definition; do not leave it to rounding
    cum[~np.isnan(cum[:, -1]), -1] = 1.0
    path = None
    if record:
        sel = np.concatenate([np.diff(rt) > 0, [True]])
        path = JumpPath(rt[sel], rm[sel], rk[sel], max(float(t_end), rt[-1]), alpha=alpha,
                        growth=theta * I1, absorbed=ext >= 0,
                        extinction_time=float(ext) if ext >= 0 else None)
    return TypeBinPath(v, targets, cum, t_of, snaps,
                       float(ext) if ext >= 0 else None, float(t_end), float(S), int(n_ev),
                       path)
