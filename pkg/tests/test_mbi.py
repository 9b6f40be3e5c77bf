import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from betafv.csbp import extinction_prob
from betafv.excursion import ExcursionTruncation, TypeLaw
from betafv.mbi import (AtomicMeasure, ImmigrationG, count_atoms, extinction_time, kappa_s,
                        simulate_mbi, simulate_type_bins, snapshot_measure)
from betafv.rng import RngStream

from conftest import mean_se, within

TR = ExcursionTruncation("by_age", 0.05)


def test_kappa_s_value():
    # 1.5 * 0.5 * Gamma(1.5), Gamma(1.5) = sqrt(pi)/2
    assert kappa_s(1.5) == pytest.approx(0.75 * math.sqrt(math.pi) / 2, rel=1e-14)
    assert kappa_s(1.5) == pytest.approx(0.664670, abs=5e-7)


class TestImmigrationG:
    def test_kinds(self):
        assert ImmigrationG.constant(0.5)(3.0) == 0.5
        assert ImmigrationG.power(2.0, 1.5)(4.0) == pytest.approx(4.0)
        tab = ImmigrationG.table([0, 1, 2], [0, 1, 1.5])
        assert tab(0.5) == pytest.approx(0.5)
        assert tab(10.0) == pytest.approx(1.5)

    @pytest.mark.parametrize("bad", [dict(kind="cubic"), dict(kind="constant", theta=-1)])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            ImmigrationG(**bad)

    def test_table_must_be_nondecreasing(self):
        with pytest.raises(ValueError):
            ImmigrationG.table([0, 1], [1, 0])


def test_atomic_measure_cdf():
    m = AtomicMeasure([0.7, 0.2], [1.0, 3.0])
    assert m.total == 4.0
    assert m.cdf([0.1, 0.2, 0.5, 1.0]).tolist() == [0.0, 3.0, 3.0, 4.0]
    assert m.normalized().total == pytest.approx(1.0)


def test_no_initial_mass_and_no_immigration_is_empty():
    st_ = simulate_mbi(RngStream(1, 0), ImmigrationG.constant(0.0), 1.5, 1.0, TR,
                       F=TypeLaw(mass=0.0))
    assert st_.birth.size == 0
    assert extinction_time(st_) is not None
    assert st_.t_stop < 1.0
    assert st_.total_mass(st_.t_stop) == 0.0


def test_zero_immigration_reduces_to_csbp_extinction():
    # with g = 0 the total mass is a CSBP started from F(1) = 1
    rng = RngStream(3, 0)
    t = 1.0
    n = 400
    ext = [simulate_mbi(rng.child(i), ImmigrationG.constant(0.0), 1.5, t, TR).extinction
           is not None for i in range(n)]
    p, se = mean_se(ext)
    # the entrance window delays nothing for extinction probabilities of the initial
    # atoms, which die independently with P(alive at t) = 1 - exp(-ubar(t) F(1))
    assert within(p, float(extinction_prob(1.0, t, 1.5)), max(se, 0.005), extra=0.01)


def test_frozen_mass_before_entrance_age():
    st_ = simulate_mbi(RngStream(4, 0), ImmigrationG.constant(0.5), 1.5, 0.2, TR)
    assert st_.total_mass(0.0) == 1.0
    assert st_.total_mass(0.049) == 1.0
    with pytest.raises(ValueError):
        st_.atom_masses(0.01)


def test_snapshot_consistent_with_total():
    st_ = simulate_mbi(RngStream(5, 0), ImmigrationG.power(1.0, 1.5), 1.5, 0.5, TR)
    for t in (0.05, 0.2, 0.5):
        snap = snapshot_measure(st_, t)
        assert snap.total == pytest.approx(st_.total_mass(t), rel=1e-12)
        assert count_atoms(st_, t) == len(snap)
        assert np.all((snap.locations >= 0) & (snap.locations <= 1))


def test_total_mass_path_tracks_exact_mass():
    st_ = simulate_mbi(RngStream(6, 0), ImmigrationG.constant(0.5), 1.5, 1.0, TR)
    path = st_.total_mass_path()
    for t in np.linspace(0.06, 1.0, 7):
        assert path.at(t) == pytest.approx(st_.total_mass(t), rel=1e-3, abs=1e-9)


def test_constant_immigration_mean():
    # E[Z_t(1)] = 1 + theta t; the visible part misses the last delta of immigrants
    n, theta, t = 1500, 0.5, 1.0
    vals = [simulate_mbi(RngStream(7, i), ImmigrationG.constant(theta), 1.5, t, TR)
            .total_mass(t) for i in range(n)]
    m, se = mean_se(vals)
    assert within(m, 1 + theta * t, se, extra=0.03 * (1 + theta * t))


def test_determinism():
    a = simulate_mbi(RngStream(8, 0), ImmigrationG.power(1.0, 1.5), 1.5, 0.5, TR)
    b = simulate_mbi(RngStream(8, 0), ImmigrationG.power(1.0, 1.5), 1.5, 0.5, TR)
    assert np.array_equal(a.log_time, b.log_time)
    assert np.array_equal(a.log_mass, b.log_mass)


def _ids(st_):
    return set(zip(st_.strip.tolist(), st_.birth.tolist(), st_.mark.tolist()))


@pytest.mark.parametrize("g_small,g_big", [
    (ImmigrationG.constant(0.5), ImmigrationG.constant(1.5)),
    (ImmigrationG.power(0.5, 1.5), ImmigrationG.power(2.0, 1.5)),
    (ImmigrationG.table([0, 1, 3], [0.0, 0.5, 0.5]), ImmigrationG.power(1.0, 1.5)),
])
def test_comparison_coupling(g_small, g_big):
    grid = np.linspace(0.05, 1.0, 20)
    for r in range(10):
        kw = dict(key=1000 + r, strip_width=0.25)
        small = simulate_mbi(RngStream(9, r), g_small, 1.5, 1.0, TR, **kw)
        big = simulate_mbi(RngStream(9, r), g_big, 1.5, 1.0, TR, **kw)
        assert _ids(small) <= _ids(big)
        for t in grid:
            if t <= min(small.t_stop, big.t_stop):
                assert count_atoms(small, t) <= count_atoms(big, t)
                assert small.total_mass(t) <= big.total_mass(t) * (1 + 1e-9) + 1e-12


def test_strip_breach_adds_strips():
    st_ = simulate_mbi(RngStream(10, 0), ImmigrationG.power(4.0, 1.5), 1.5, 2.0, TR,
                       strip_width=0.1)
    assert st_.n_strips >= 1


def test_requires_by_age():
    with pytest.raises(ValueError):
        simulate_mbi(RngStream(1, 0), ImmigrationG.constant(1.0), 1.5, 1.0,
                     ExcursionTruncation("by_length", 0.1))


def test_power_alpha_must_match():
    with pytest.raises(ValueError):
        simulate_mbi(RngStream(1, 0), ImmigrationG.power(1.0, 1.3), 1.5, 1.0, TR)


def test_stop_at_time_change_level():
    st_ = simulate_mbi(RngStream(11, 0), ImmigrationG.power(kappa_s(1.5), 1.5), 1.5, 100.0,
                       TR, s_stop=0.3)
    assert st_.time_change_total == pytest.approx(0.3, rel=1e-12)
    assert st_.t_stop < 100.0


# --- type bins ---------------------------------------------------------------------------

class TestTypeBins:
    def test_shapes_and_normalisation(self):
        res = simulate_type_bins(RngStream(12, 0), 1.0, 1.5, math.inf,
                                 v_grid=(0.25, 0.5, 1.0), fv_times=[0.1, 0.5])
        assert res.cumulative.shape == (2, 3)
        assert np.all(res.cumulative[:, -1] == 1.0)
        assert np.all(np.diff(res.cumulative, axis=1) >= 0)
        assert np.all(res.real_times[:-1] <= res.real_times[1:])

    def test_zero_theta_extinction_matches_csbp(self):
        n = 1000
        ext = [simulate_type_bins(RngStream(13, i), 0.0, 1.5, 1.0).extinction_time is not None
               for i in range(n)]
        p, se = mean_se(ext)
        assert within(p, float(extinction_prob(1.0, 1.0, 1.5)), se, extra=0.01)

    def test_mean_with_linear_immigration_at_alpha_two_limit(self):
        # with g = theta x^(2-alpha) the mean solves m' = theta E[X^(2-alpha)] <= theta m^(2-alpha)
        n = 800
        m = [simulate_type_bins(RngStream(14, i), 1.0, 1.5, 0.5, record=True).mass_path.at(0.5)
             for i in range(n)]
        mean, se = mean_se(m)
        upper = (1.0 + 0.5 * 1.0 * 0.5) ** 2    # Jensen bound from z' = beta theta
        assert mean <= upper + 3 * se
        assert mean >= 1.0 - 3 * se

    @pytest.mark.parametrize("bad", [dict(v_grid=(0.5,)), dict(v_grid=(0.5, 0.2, 1.0))])
    def test_grid_validation(self, bad):
        with pytest.raises(ValueError):
            simulate_type_bins(RngStream(1, 0), 1.0, 1.5, 1.0, **bad)

    @given(theta=st.floats(0.0, 3.0), seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_snapshots_are_probability_cdfs(self, theta, seed):
        res = simulate_type_bins(RngStream(seed, 0), theta, 1.5, math.inf,
                                 v_grid=(0.3, 0.6, 1.0), fv_times=[0.2], absorb=1e-280)
        y = res.cumulative[0]
        assert np.all((y >= 0) & (y <= 1))
        assert y[-1] == 1.0
