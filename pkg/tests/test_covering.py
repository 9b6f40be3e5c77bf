import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from betafv.covering import (IntensityLaw, ShadowSet, cover_report, expected_multiplicity,
                             main_theorem_probe, sample_shadows, schmuland_experiment,
                             shepp_integral, simulate_shadows)
from betafv.rng import RngStream

from conftest import mean_se, within


def test_zero_intensity():
    law = IntensityLaw.power(0.0, 2.0)
    val, cls = shepp_integral(law)
    assert val == pytest.approx(1.0, abs=2e-5)
    assert cls == "finite"
    rep = simulate_shadows(RngStream(1, 0), law, 0.1, 1.0, np.linspace(0, 1, 5))
    assert rep.gaps.tolist() == [[0.0, 1.0]]
    assert rep.min_count == 0


def test_schmuland_inner_closed_form():
    law = IntensityLaw.schmuland(0.7)
    for t in (0.01, 0.3, 0.9):
        ref = integrate.quad(lambda h: (h - t) * 0.7 / h**2, t, 1.0)[0]
        assert float(law.inner(t)) == pytest.approx(ref, rel=1e-12)
        assert float(law.inner(t)) == pytest.approx(0.7 * (-math.log(t) - 1 + t), rel=1e-14)


@pytest.mark.parametrize("law", [IntensityLaw.power(0.8, 1.6), IntensityLaw.power(1.2, 2.5),
                                 IntensityLaw.stable_tail(1.0, 0.5, 1.3)])
def test_power_inner_matches_quadrature(law):
    c, b = law.as_power()
    for t in (0.02, 0.5):
        ref = integrate.quad(lambda h: (h - t) * c * h ** (-b), t, 1.0, epsrel=1e-12)[0]
        assert float(law.inner(t)) == pytest.approx(ref, rel=1e-9)


def test_stable_tail_exponent():
    c, b = IntensityLaw.stable_tail(2.0, 0.5, 1.5).as_power()
    assert b == pytest.approx(3.0)
    assert c == pytest.approx(2.0 * 0.5**0.5 * 0.5**-3.0)


@pytest.mark.parametrize("theta,expected", [(0.25, "finite"), (0.5, "finite"), (0.9, "finite"),
                                            (1.0, "divergent"), (1.1, "divergent"),
                                            (2.0, "divergent")])
def test_schmuland_classification(theta, expected):
    assert shepp_integral(IntensityLaw.schmuland(theta))[1] == expected


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
@pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("eps", [0.5, 1.0, 2.0])
def test_stable_tail_divergent(alpha, theta, eps):
    assert shepp_integral(IntensityLaw.stable_tail(theta, eps, alpha))[1] == "divergent"


def test_tabulated_classification():
    # bounded density: the integral stays bounded
    flat = IntensityLaw.tabulated([1e-6, 1.0], [3.0, 3.0])
    assert shepp_integral(flat)[1] == "finite"
    hs = np.geomspace(1e-7, 1, 200)
    steep = IntensityLaw.tabulated(hs, 2.0 * hs**-2)
    assert shepp_integral(steep)[1] == "divergent"


def test_shepp_value_grows_for_divergent_law():
    law = IntensityLaw.schmuland(2.0)
    assert shepp_integral(law, 1e-5)[0] > shepp_integral(law, 1e-3)[0] > 10


@pytest.mark.parametrize("law", [IntensityLaw.schmuland(1.0), IntensityLaw.power(0.3, 2.5),
                                 IntensityLaw.stable_tail(1.0, 1.0, 1.5),
                                 IntensityLaw.tabulated([0.01, 0.5, 2.0], [40.0, 4.0, 0.5])])
def test_mean_multiplicity(law):
    n, d = 3000, 0.05
    rng = RngStream(2, 0)
    counts = [simulate_shadows(rng.child(i), law, d, 1.0, [1.0]).counts[0] for i in range(n)]
    m, se = mean_se(counts)
    assert within(m, expected_multiplicity(law, d, 1.0), se)


def test_schmuland_multiplicity_closed_form():
    assert expected_multiplicity(IntensityLaw.schmuland(1.0), 0.1, 1.0) == pytest.approx(
        1 + math.log(10), rel=1e-10)


def test_sample_lengths_tail():
    law = IntensityLaw.tabulated([0.1, 1.0], [1.0, 1.0])
    h = law.sample_lengths(np.linspace(0.001, 0.999, 999), 0.1)
    assert h.min() >= 0.1 and h.max() <= 1.0
    assert np.median(h) == pytest.approx(0.55, abs=0.01)


def test_gaps_and_counts_agree():
    sh = ShadowSet(np.array([0.1, 0.15, 0.6]), np.array([0.2, 0.1, 0.3]), np.zeros(3), 1.0, 0.1)
    rep = cover_report(sh, [0.05, 0.12, 0.2, 0.4, 0.7, 0.95])
    assert rep.counts.tolist() == [0, 1, 2, 0, 1, 0]
    np.testing.assert_allclose(rep.gaps, [[0.0, 0.1], [0.3, 0.6], [0.9, 1.0]])
    assert rep.has_gap(0.35, 0.4)
    assert not rep.has_gap(0.61, 0.89)


@given(seed=st.integers(0, 10_000), theta=st.floats(0.1, 3.0))
@settings(max_examples=50, deadline=None)
def test_grid_zero_counts_lie_in_gaps(seed, theta):
    grid = np.linspace(0, 1, 101)[:-1]
    rep = simulate_shadows(RngStream(seed, 0), IntensityLaw.schmuland(theta), 0.05, 1.0, grid)
    for t, c in zip(grid, rep.counts):
        in_gap = any(a <= t < b for a, b in rep.gaps)
        assert (c == 0) == in_gap


def test_restrict_is_coupled_subset():
    base = sample_shadows(RngStream(3, 0), IntensityLaw.schmuland(2.0), 0.01, 1.0)
    grid = np.linspace(0, 1, 200)
    full = cover_report(base, grid).counts
    for d, keep in [(0.03, 1.0), (0.01, 0.5), (0.1, 0.25)]:
        sub = cover_report(base.restrict(d, keep), grid).counts
        assert np.all(sub <= full)
    with pytest.raises(ValueError):
        base.restrict(0.001)


def test_past_births_only_add_shadows():
    law = IntensityLaw.schmuland(1.0)
    rep0 = simulate_shadows(RngStream(4, 0), law, 0.1, 1.0, [0.5])
    rep1 = simulate_shadows(RngStream(4, 0), law, 0.1, 1.0, [0.5], past_births=True)
    assert rep1.counts.shape == rep0.counts.shape


def test_schmuland_experiment_monotone():
    tab = schmuland_experiment(RngStream(5, 0), [0.5, 1.5], [0.1, 0.03, 0.01], n_reps=100)
    assert tab.frequencies.shape == (2, 3)
    assert np.all(np.diff(tab.frequencies, axis=0) <= 0)   # more theta, fewer gaps
    assert np.all(np.diff(tab.frequencies, axis=1) <= 0)   # smaller delta, fewer gaps
    assert tab.classification == ["finite", "divergent"]


def test_main_probe_monotone_per_replicate():
    out = main_theorem_probe(RngStream(6, 0), 1.0, 1.0, 1.5, [0.1, 0.03, 0.01], n_reps=20)
    assert out.shape == (20, 3)
    assert np.all(np.diff(out, axis=1) >= 0)


@pytest.mark.parametrize("bad", [dict(kind="cubic"), dict(kind="power", c=1.0, beta=0.5),
                                 dict(kind="schmuland", theta=-1.0),
                                 dict(kind="stable_tail", theta=1.0, alpha=2.5)])
def test_law_validation(bad):
    with pytest.raises(ValueError):
        IntensityLaw(**bad)


def test_tabulated_inner_matches_quadrature():
    law = IntensityLaw.tabulated([0.01, 0.2, 0.7, 3.0], [50.0, 5.0, 2.0, 0.1])
    for t in (0.005, 0.05, 0.3, 0.9):
        ref = integrate.quad(lambda h: (h - t) * float(law.density(h)), t, 1.0,
                             points=[0.01, 0.2, 0.7], epsrel=1e-12)[0]
        assert float(law.inner(t)) == pytest.approx(ref, rel=1e-9)
