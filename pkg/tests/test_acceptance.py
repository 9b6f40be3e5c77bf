"""Acceptance criteria at their stated sizes and tolerances.

Each test records a PASS/FAIL line that the terminal summary prints after the
run (see ``pytest_terminal_summary`` in ``conftest.py``).  Run only these with
``pytest tests/test_acceptance.py``; the whole file takes roughly fifteen
minutes on one core.
"""
import math
import time

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import beta as beta_fn

from betafv.cli import EXPERIMENTS, main
from betafv.covering import (IntensityLaw, main_theorem_probe, schmuland_experiment,
                             shepp_integral, simulate_shadows)
from betafv.csbp import csbp_marginals, cumulant, ubar
from betafv.excursion import ExcursionTruncation, entrance_mass, length_tail
from betafv.flemingviot import cross_validate, fv_direct, fv_from_mbi
from betafv.lookdown import atom_count_trajectory, beta_rate
from betafv.mbi import ImmigrationG, count_atoms, simulate_mbi, simulate_type_bins
from betafv.rng import RngStream

from conftest import ACCEPTANCE_RESULTS, mean_se, tiny_config_text, within

pytestmark = pytest.mark.acceptance

SEED = 20240611


def record(key, ok, detail):
    ACCEPTANCE_RESULTS[key] = (bool(ok), detail)
    assert ok, detail


def test_c01_csbp_laplace():
    start = time.perf_counter()
    times = [0.25, 0.5, 1.0]
    worst, failures = 0.0, []
    for i, alpha in enumerate([1.2, 1.5, 1.8]):
        vals, _ = csbp_marginals(RngStream(SEED, 100 + i), 1.0, alpha, times, 100_000, 1e-3)
        for j, t in enumerate(times):
            for lam in (0.5, 1.0, 2.0):
                m, se = mean_se(np.exp(-lam * vals[:, j]))
                exact = math.exp(-float(cumulant(t, lam, alpha)))
                worst = max(worst, abs(m - exact))
                if not within(m, exact, se, extra=0.01):
                    failures.append((alpha, t, lam, m, exact))
    elapsed = time.perf_counter() - start
    record("1", not failures and elapsed <= 300,
           f"max |MC - exact| = {worst:.4f}, {len(failures)} cells outside, {elapsed:.0f} s")


def test_c02_extinction_probability():
    vals, _ = csbp_marginals(RngStream(SEED, 200), 1.0, 1.5, [1.0], 100_000, 1e-3)
    p, se = mean_se(vals[:, 0] == 0)
    target = math.exp(-4.0)
    record("2", within(p, target, se, extra=0.01), f"P(X_1 = 0) = {p:.5f} vs {target:.6f}")


def test_c03_excursion_consistency():
    hs = np.geomspace(1e-4, 1e2, 61)
    ok_id, worst = True, 0.0
    for alpha in (1.3, 1.5, 1.8):
        err = np.max(np.abs(length_tail(hs, alpha) / ubar(hs, alpha) - 1.0))
        worst = max(worst, err)
        ok_id &= err <= 1e-12
    bad = []
    for i, (delta, alpha) in enumerate([(d, a) for d in (0.1, 1.0) for a in (1.3, 1.5, 1.8)]):
        w = entrance_mass(RngStream(SEED, 300 + i), delta, alpha, 100_000)
        m, se = mean_se(w)
        target = 1.0 / float(ubar(delta, alpha))
        if not within(m, target, se, extra=0.02 * target):
            bad.append((delta, alpha, m, target))
    record("3", ok_id and not bad,
           f"identity max rel err {worst:.1e}; entrance means outside: {bad or 'none'}")


def test_c04_mbi_constant_mean():
    theta, t, n = 0.5, 2.0, 10_000
    trunc = ExcursionTruncation("by_age", 0.05)
    g = ImmigrationG.constant(theta)
    vals = [simulate_mbi(RngStream(SEED, 400_000 + r), g, 1.5, t, trunc).total_mass(t)
            for r in range(n)]
    m, se = mean_se(vals)
    target = 1 + theta * t
    record("4", within(m, target, se, extra=0.03 * target),
           f"E[Z_t(1)] = {m:.4f} +- {se:.4f} vs {target}")


def test_c05_comparison_coupling():
    trunc = ExcursionTruncation("by_age", 0.05)
    small, big = ImmigrationG.power(0.5, 1.5), ImmigrationG.power(1.0, 1.5)
    grid = np.linspace(0.05, 1.0, 40)
    violations = 0
    for r in range(200):
        kw = dict(key=SEED + r, strip_width=0.5)
        a = simulate_mbi(RngStream(SEED, 500 + r), small, 1.5, 1.0, trunc, **kw)
        b = simulate_mbi(RngStream(SEED, 500 + r), big, 1.5, 1.0, trunc, **kw)
        ids_a = set(zip(a.strip.tolist(), a.birth.tolist(), a.mark.tolist()))
        ids_b = set(zip(b.strip.tolist(), b.birth.tolist(), b.mark.tolist()))
        violations += not ids_a <= ids_b
        violations += sum(count_atoms(a, s) > count_atoms(b, s)
                          for s in grid if s <= min(a.t_stop, b.t_stop))
    record("5", violations == 0, f"{violations} violations in 200 coupled runs")


def test_c06_covering_mean():
    start = time.perf_counter()
    law = IntensityLaw.schmuland(1.0)
    counts = [simulate_shadows(RngStream(SEED, 600_000 + r), law, 0.1, 1.0, [1.0]).counts[0]
              for r in range(10_000)]
    elapsed = time.perf_counter() - start
    m, se = mean_se(counts)
    target = 1 + math.log(10)
    record("6", within(m, target, se) and elapsed <= 60,
           f"E[N_1] = {m:.4f} +- {se:.4f} vs {target:.4f}, {elapsed:.1f} s")


def test_c07_shepp_classifier():
    wrong = []
    for theta in (0.25, 0.5, 0.9, 1.0, 1.1, 2.0):
        expect = "finite" if theta < 1 else "divergent"
        got = shepp_integral(IntensityLaw.schmuland(theta))[1]
        if got != expect:
            wrong.append(("schmuland", theta, got))
    for theta in (0.5, 1.0, 2.0):
        for eps in (0.5, 1.0, 2.0):
            for alpha in (1.2, 1.5, 1.8):
                got = shepp_integral(IntensityLaw.stable_tail(theta, eps, alpha))[1]
                if got != "divergent":
                    wrong.append(("stable_tail", theta, eps, alpha, got))
    record("7", not wrong, f"misclassified: {wrong or 'none'}")


def test_c08_schmuland_dichotomy():
    tab = schmuland_experiment(RngStream(SEED, 800), [0.5, 1.5], [0.1, 0.03, 0.01], T=1.0,
                               n_reps=500, t0_fraction=0.05)
    low, high = tab.frequencies
    ok = low[-1] >= 0.2 and high[-1] <= 0.05 and np.all(np.diff(high) <= 0)
    record("8", ok, f"gap frequency theta=0.5: {low.tolist()}, theta=1.5: {high.tolist()}")


def test_c09_main_theorem_probe():
    mins = main_theorem_probe(RngStream(SEED, 900), 1.0, 1.0, 1.5, [0.1, 0.03, 0.01], T=1.0,
                              n_reps=200, t0=0.05, n_grid=200)
    med = np.median(mins, axis=0)
    ok = mins.min() >= 1 and np.all(np.diff(med) >= 0)
    record("9", ok, f"min {mins.min(axis=0).tolist()}, median {med.tolist()}")


def test_c10_fleming_viot_invariants():
    v = (0.25, 0.5, 0.75, 1.0)
    n = 1000
    a = np.array([fv_from_mbi(RngStream(SEED, 10_000 + r), 1.0, 1.5, [0.5], v_grid=v)
                  .values[0] for r in range(n)])
    b = np.array([fv_direct(RngStream(SEED, 20_000 + r), 1.0, 1.5, [0.5], delta_y=1e-3,
                            v_grid=v).values[0] for r in range(n)])
    notes, ok = [], True
    for name, s in (("mbi", a), ("direct", b)):
        ok &= bool(np.all(s[:, -1] == 1.0)) and bool(np.all(np.diff(s, axis=1) >= 0))
        for j, vv in enumerate(v[:-1]):
            m, se = mean_se(s[:, j])
            ok &= within(m, vv, se)
            notes.append(f"{name} E[Y(v={vv})]={m:.3f}+-{se:.3f}")
    record("10", ok, "; ".join(notes))


def test_c11_pipelines_equal_in_law():
    cv = cross_validate(RngStream(SEED, 1100), 1.0, 1.5, 0.5, 0.5, 1000, delta_y=1e-4)
    record("11", cv.p_value >= 0.01,
           f"KS p = {cv.p_value:.3f}, means {cv.mean_mbi:.3f} / {cv.mean_direct:.3f}")


def test_c12a_beta_rate_oracle():
    worst = 0.0
    for alpha in (1.2, 1.5, 1.8):
        for n in range(2, 51):
            for k in range(2, n + 1):
                ref = integrate.quad(lambda x: 1.0, 0, 1, weight="alg",
                                     wvar=(k - 1 - alpha, n - k + alpha - 1), epsabs=0,
                                     epsrel=1e-13)[0] / beta_fn(2 - alpha, alpha)
                worst = max(worst, abs(beta_rate(n, k, alpha) / ref - 1))
    record("12.a", worst <= 1e-8, f"max rel err {worst:.1e}")


def test_c12b_consistency_identity():
    worst = 0.0
    for alpha in (1.2, 1.5, 1.8):
        for n in range(2, 201):
            for k in range(2, n + 1):
                lhs = beta_rate(n, k, alpha)
                rhs = beta_rate(n + 1, k, alpha) + beta_rate(n + 1, k + 1, alpha)
                worst = max(worst, abs(lhs - rhs) / lhs)
    record("12.b", worst <= 1e-10, f"max rel err {worst:.1e}")


def test_c12c_block_count_slope():
    grid = np.geomspace(0.01, 1.0, 21)
    counts = np.array([atom_count_trajectory(RngStream(SEED, 1200 + r), 2000, 1.5, 0.0, grid)
                       for r in range(20)])
    mean = counts.mean(axis=0)
    # fit where 1 << N << n
    keep = (mean >= 10) & (mean <= 200)
    slope = np.polyfit(np.log(grid[keep]), np.log(mean[keep]), 1)[0]
    target = -1.0 / (1.5 - 1.0)
    record("12.c", abs(slope - target) <= 0.3, f"slope {slope:.3f} vs {target} +- 0.3")


def test_c13_extinction_dichotomy():
    frac = {}
    for theta in (0.3, 2.0):
        ext = [simulate_type_bins(RngStream(SEED, 13_000 + r), theta, 1.5, 50.0)
               .extinction_time is not None for r in range(200)]
        frac[theta] = float(np.mean(ext))
    record("13", frac[0.3] >= 0.9 and frac[2.0] <= 0.1, f"extinct fraction {frac}")


def test_c14_determinism(tmp_path):
    differ = []
    for name in EXPERIMENTS:
        cfg = tmp_path / f"{name}.txt"
        cfg.write_text(tiny_config_text(name, seed=SEED))
        outs = []
        for rep in range(2):
            out = tmp_path / f"{name}_{rep}.csv"
            assert main(["run", str(cfg), "--out", str(out)]) == 0
            outs.append(out.read_bytes())
            outs.append((tmp_path / f"{name}_{rep}.csv.manifest").read_bytes()
                        .replace(str(out).encode(), b""))
        if outs[0] != outs[2] or outs[1] != outs[3]:
            differ.append(name)
    record("14", not differ, f"{len(EXPERIMENTS)} experiments, differing: {differ or 'none'}")
