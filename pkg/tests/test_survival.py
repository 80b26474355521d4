import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from playerprofile.survival import (SurvivalCurve, curve_quantile, final_probability, kaplan_meier,
                                    median_survival, population_stats, read_curves, restricted_mean,
                                    write_curves)


def curve(knots, support_end=None):
    t, s = zip(*knots)
    return SurvivalCurve(np.array(t, float), np.array(s, float), support_end if support_end is not None else t[-1])


# -- kaplan_meier -------------------------------------------------------------

def test_km_all_events():
    c = kaplan_meier([1, 2, 3], [True, True, True])
    np.testing.assert_array_equal(c.times, [0, 1, 2, 3])
    np.testing.assert_allclose(c.surv, [1, 2 / 3, 1 / 3, 0], atol=1e-15)
    assert c(1.5) == pytest.approx(2 / 3)
    assert c(0.999) == 1.0


def test_km_with_censoring():
    c = kaplan_meier([1, 2, 3], [True, False, True])
    assert c(1.0) == pytest.approx(2 / 3)
    assert c(2.5) == pytest.approx(2 / 3)
    assert c(3.0) == 0.0
    assert c.support_end == 3.0


def test_km_all_censored_is_constant_one():
    c = kaplan_meier([4, 5, 9], [False, False, False])
    assert c.knots == [(0.0, 1.0)]
    assert c.support_end == 9.0
    assert final_probability(c) == 1.0


def test_km_ties_use_aggregate_factor():
    # two events and one censoring tied at t=2, all at risk there
    c = kaplan_meier([1, 2, 2, 2, 5], [True, True, True, False, True])
    assert c(2.0) == pytest.approx(0.8 * (1 - 2 / 4))
    assert c(5.0) == 0.0


def test_km_zero_time_event_lowers_first_knot():
    c = kaplan_meier([0, 1, 2], [True, False, True])
    assert c.times[0] == 0.0
    assert c.surv[0] == pytest.approx(2 / 3)


@pytest.mark.parametrize("times, events", [([], []), ([1, -1], [True, True]), ([1, 2], [True])])
def test_km_rejects_bad_input(times, events):
    with pytest.raises(ValueError):
        kaplan_meier(times, events)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=60))
def test_km_uncensored_equals_empirical_survival(values):
    t = np.array(values, float)
    c = kaplan_meier(t, np.ones(t.size, bool))
    for u in np.unique(t):
        assert c(u) == pytest.approx(np.mean(t > u), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100, allow_nan=False), st.booleans()), min_size=1, max_size=80))
def test_km_curve_invariants(rows):
    t, d = zip(*rows)
    c = kaplan_meier(t, d)
    assert np.all(np.diff(c.times) > 0)
    assert np.all(np.diff(c.surv) <= 0)
    assert np.all((c.surv >= 0) & (c.surv <= 1))
    assert final_probability(c) <= c.surv.min() + 0.0
    assert c.support_end == max(t)


def test_km_exponential_oracle():
    rng = np.random.default_rng(7)
    lam = 0.1
    t = rng.exponential(1 / lam, 10_000)
    c = kaplan_meier(t, np.ones(t.size, bool))
    grid = np.linspace(0, 3 / lam, 3001)
    assert np.max(np.abs(c(grid) - np.exp(-lam * grid))) <= 0.02


# -- curve queries ------------------------------------------------------------

def test_quantiles():
    c = curve([(0, 1), (5, 0.6), (10, 0.4)])
    assert curve_quantile(c, 0.5) == 10
    assert curve_quantile(c, 0.7) == 5
    assert median_survival(SurvivalCurve.constant(20)) is None


def test_quantile_requires_open_interval():
    with pytest.raises(ValueError):
        curve_quantile(SurvivalCurve.constant(), 1.0)


def test_final_probability():
    assert final_probability(curve([(0, 1), (5, 0.6)], 5)) == 0.6
    assert final_probability(curve([(0, 1), (5, 0.0)])) == 0.0
    assert final_probability(SurvivalCurve.constant(3)) == 1.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 50, allow_nan=False), st.booleans()), min_size=1, max_size=40),
       st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_quantile_monotone_in_p(rows, p1, p2):
    t, d = zip(*rows)
    c = kaplan_meier(t, d)
    lo, hi = sorted((p1, p2))
    q_lo, q_hi = curve_quantile(c, lo), curve_quantile(c, hi)
    if q_lo is not None and q_hi is not None:
        assert q_lo >= q_hi
    if q_lo is not None:
        assert q_hi is not None


def test_restricted_mean():
    c = curve([(0, 1), (2, 0.5)], 6)
    assert restricted_mean(c) == pytest.approx(2 + 0.5 * 4)
    assert restricted_mean(c, 1) == pytest.approx(1)


@pytest.mark.parametrize("knots", [
    [(1, 1.0)],                 # first knot not at 0
    [(0, 1.0), (0, 0.5)],       # non-increasing time
    [(0, 0.5), (1, 0.7)],       # increasing survival
    [(0, 1.2)],                 # out of range
])
def test_curve_validation(knots):
    with pytest.raises(ValueError):
        curve(knots)


def test_from_grid_drops_flat_knots():
    c = SurvivalCurve.from_grid([0, 1, 2, 3], [1, 1, 0.5, 0.5], 3)
    assert c.knots == [(0.0, 1.0), (2.0, 0.5)]


# -- population stats ---------------------------------------------------------

def test_population_stats_examples():
    a = curve([(0, 1), (100, 0.4)], 150)
    b = curve([(0, 1), (200, 0.3)], 250)
    st_ = population_stats([a, b])
    assert st_.avg_median == 150 and st_.avg_median_nonvanishing == 150

    st_ = population_stats([SurvivalCurve.constant(10)])
    assert st_.avg_median is None and st_.avg_median_nonvanishing is None

    vanishing = curve([(0, 1), (100, 0.0)])
    st_ = population_stats([vanishing, b])
    assert st_.avg_median == 150 and st_.avg_median_nonvanishing == 200
    assert (st_.n_with_median, st_.n_nonvanishing) == (2, 1)


def test_population_stats_rejects_empty():
    with pytest.raises(ValueError):
        population_stats([])


def test_curve_io_roundtrip(tmp_path):
    curves = {"a": kaplan_meier([1, 2, 3], [True, False, True], "level"),
              "b": SurvivalCurve.constant(7.5, "level")}
    write_curves(curves, tmp_path / "level.csv")
    back = read_curves(tmp_path / "level.csv")
    assert back == curves
