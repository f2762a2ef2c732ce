import numpy as np
import pytest

from kanvix.data import SyntheticOuConfig, TimeSeries, simulate_ou
from kanvix.exceptions import EmptyJoin
from kanvix.leverage import LeverageDataset, build_leverage_dataset, fit_leverage


def bdays(n, start="2015-01-05"):
    return np.busday_offset(np.datetime64(start, "D"), np.arange(n))


def planted(seed, n=1000, b=-0.05):
    rng = np.random.default_rng(seed)
    vhat = simulate_ou(SyntheticOuConfig(n=n, seed=seed)).values
    r = rng.normal(0, 1.2, n)
    y = vhat + b * r + rng.normal(0, 0.1, n)
    return LeverageDataset(bdays(n), vhat, r, y)


# --- dataset join -------------------------------------------------------------

def test_join_aligned():
    d = bdays(11)
    actuals = TimeSeries(d, np.arange(11.0) + 10)
    returns = TimeSeries(d, np.arange(11.0) / 10)
    base = TimeSeries(d[1:], np.arange(10.0) + 10)
    ds = build_leverage_dataset(base, returns, actuals)
    assert len(ds) == 10 and ds.dropped == 0
    # the return paired with target t is the one dated on the previous trading day
    np.testing.assert_array_equal(ds.ret_lag, returns.values[:-1])
    np.testing.assert_array_equal(ds.y, actuals.values[1:])


def test_join_one_missing_return():
    d = bdays(11)
    actuals = TimeSeries(d, np.arange(11.0) + 10)
    keep = np.ones(11, dtype=bool)
    keep[4] = False
    returns = TimeSeries(d[keep], np.arange(11.0)[keep])
    ds = build_leverage_dataset(TimeSeries(d[1:], np.ones(10)), returns, actuals)
    assert len(ds) == 9 and ds.dropped == 1
    assert d[5] not in ds.dates


def test_join_disjoint():
    d = bdays(10)
    later = bdays(10, "2030-01-07")
    with pytest.raises(EmptyJoin):
        build_leverage_dataset(TimeSeries(later, np.ones(10)), TimeSeries(d, np.ones(10)), TimeSeries(d, np.ones(10)))


# --- fit ----------------------------------------------------------------------

def test_planted_coefficient_recovered():
    ds = planted(0)
    res = fit_leverage(ds)
    cf = res.closed_form
    assert abs(cf.coefficient("R^e_{t-1}") + 0.05) < 0.01
    assert abs(cf.coefficient("V̂_t") - 1.0) < 0.02
    # independent OLS oracle on the same rows
    A = np.column_stack([np.ones(len(ds)), ds.vhat, ds.ret_lag])
    beta = np.linalg.lstsq(A, ds.y, rcond=None)[0]
    assert abs(cf.coefficient("R^e_{t-1}") - beta[2]) < 0.01
    assert res.r2_improvement > 0
    assert not res.non_linear_fit_warning
    assert res.closed_form.render(4).startswith("Ṽ_t = ")


def test_spline_r2_not_below_base():
    res = fit_leverage(planted(1, n=600))
    assert res.spline_r2 >= res.base_metrics.r2 - 1e-12


def test_closed_form_matches_symbolic_network():
    ds = planted(2, n=500)
    res = fit_leverage(ds)
    np.testing.assert_allclose(res.closed_form(ds.X), res.symbolic(ds.X), rtol=0, atol=1e-10 * np.abs(ds.y).max())


def test_null_return_effect():
    small = 0
    for seed in range(10):
        ds = planted(10 + seed, n=600, b=0.0)
        cf = fit_leverage(ds).closed_form
        small += abs(cf.coefficient("R^e_{t-1}")) < 0.01
    assert small >= 9


def test_zero_returns_no_improvement():
    ds = planted(3, n=400)
    ds.ret_lag = np.zeros_like(ds.ret_lag)
    res = fit_leverage(ds)
    assert abs(res.closed_form.coefficient("R^e_{t-1}")) < 0.01
    assert abs(res.r2_improvement) < 1e-3
