import numpy as np
import pytest
from scipy.signal import lfilter
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from kanvix.data import DatasetSpec, SyntheticOuConfig, build_features, simulate_ou
from kanvix.estimators import ARIMAForecaster, HARRegressor, KANRegressor, SymbolicKANRegressor


def linear_data(n=400, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, 2))
    y = 0.7 * X[:, 0] - 0.4 * X[:, 1] + 0.2 + rng.normal(0, 0.01, n)
    return X, y


def test_params_roundtrip_and_clone():
    est = SymbolicKANRegressor(hidden=(), threshold=None, max_epochs=7)
    params = est.get_params()
    assert params["max_epochs"] == 7 and params["threshold"] is None and params["hidden"] == ()
    c = clone(est)
    assert c.get_params() == params and c is not est


def test_predict_before_fit_raises():
    with pytest.raises(NotFittedError):
        KANRegressor().predict(np.zeros((2, 2)))
    with pytest.raises(NotFittedError):
        HARRegressor().predict(np.zeros((2, 3)))


def test_kan_regressor_fits_linear_target():
    X, y = linear_data()
    est = KANRegressor(hidden=(), max_epochs=40).fit(X, y)
    assert est.score(X, y) > 0.99
    assert est.n_features_in_ == 2


def test_kan_regressor_seeded_determinism():
    X, y = linear_data(200)
    a = KANRegressor(max_epochs=5, random_state=3).fit(X, y).predict(X)
    b = KANRegressor(max_epochs=5, random_state=3).fit(X, y).predict(X)
    np.testing.assert_array_equal(a, b)


def test_symbolic_regressor_recovers_coefficients():
    X, y = linear_data(600, seed=1)
    est = SymbolicKANRegressor(hidden=(), threshold=None, max_epochs=40, feature_names=["a", "b"]).fit(X, y)
    cf = est.closed_form_
    assert cf.coefficient("a") == pytest.approx(0.7, abs=0.01)
    assert cf.coefficient("b") == pytest.approx(-0.4, abs=0.01)
    assert cf.intercept == pytest.approx(0.2, abs=0.01)
    np.testing.assert_allclose(est.predict(X), est.symbolic_(X), atol=1e-10)


def test_explicit_validation_set():
    X, y = linear_data(300)
    est = KANRegressor(hidden=(), max_epochs=3).fit(X[:200], y[:200], X[200:], y[200:])
    assert est.history_.epochs <= 3


def test_har_regressor_matches_lstsq():
    fm = build_features(simulate_ou(SyntheticOuConfig(n=600, seed=2)), DatasetSpec("D3"))
    est = HARRegressor(quarterly=True).fit(fm.X, fm.y)
    A = np.column_stack([np.ones(len(fm.y)), fm.X])
    beta = np.linalg.lstsq(A, fm.y, rcond=None)[0]
    np.testing.assert_allclose([est.intercept_, *est.coef_], beta, rtol=1e-8, atol=1e-8)
    with pytest.raises(ValueError):
        HARRegressor(quarterly=True).fit(fm.X[:, :3], fm.y)


def test_arima_forecaster_fixed_and_selected():
    e = np.random.default_rng(4).standard_normal(1500)
    x = lfilter([1.0], [1.0, -0.6], e)[500:]
    est = ARIMAForecaster(order=(1, 0, 0)).fit(x)
    assert est.model_.ar[0] == pytest.approx(0.6, abs=0.06)
    assert est.predict(x, 900).shape == (100,)
    auto = ARIMAForecaster(max_p=1, max_q=1).fit(x)
    assert auto.order_.d == 0 and auto.selection_ is not None
