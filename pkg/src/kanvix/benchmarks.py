"""Classical baselines: persistence, HAR regressions and CSS-estimated ARIMA.

All forecasters produce one-step-ahead predictions from realised history
without refitting. ARMA parameters are estimated by conditional sum of
squares (pre-sample innovations zero) with the package's L-BFGS; the AR and
MA polynomials are kept stationary/invertible by mapping unconstrained
values through tanh to partial autocorrelations.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.signal import lfilter

from .exceptions import (
    InsufficientContext,
    InsufficientHistory,
    KanvixError,
    NonConvergence,
    SingularDesign,
    SingularFit,
    ZeroVariance,
)
from .train import lbfgs_minimize

logger = logging.getLogger(__name__)

__all__ = [
    "NaiveModel",
    "HarModel",
    "ArimaOrder",
    "ArimaModel",
    "forward_fill_forecast",
    "fit_har",
    "fit_arma",
    "kpss_statistic",
    "select_order",
    "rolling_forecast",
]

KPSS_CRITICAL = {0.10: 0.347, 0.05: 0.463, 0.01: 0.739}
HAR_COLUMNS = ("V_{t-1}", "V_w", "V_m", "V_q")
HAR_WINDOWS = (1, 5, 21, 63)


def _values(series):
    return np.asarray(series.values if hasattr(series, "values") else series, dtype=float)


# --- persistence --------------------------------------------------------------

@dataclass(frozen=True)
class NaiveModel:
    name: str = "forward_fill"

    def forecast(self, values, start: int) -> np.ndarray:
        return forward_fill_forecast(values, start)

    def to_dict(self) -> dict:
        return {"model": self.name}


def forward_fill_forecast(series, start: int, end: int | None = None) -> np.ndarray:
    """``V̂_t = V_{t-1}`` for ``t`` in ``[start, end)`` (0-based indices)."""
    v = _values(series)
    end = v.size if end is None else end
    if start < 1 or end > v.size:
        raise InsufficientContext("forward filling needs one prior observation")
    return v[start - 1:end - 1].copy()


# --- HAR ----------------------------------------------------------------------

@dataclass
class HarModel:
    c: float
    beta: np.ndarray  # (4,), beta[3] == 0 for HAR(3)
    quarterly: bool

    @property
    def name(self) -> str:
        return "HAR(4)" if self.quarterly else "HAR(3)"

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        k = 4 if self.quarterly else 3
        return self.c + X[:, :k] @ self.beta[:k]

    def forecast(self, values, start: int) -> np.ndarray:
        v = _values(values)
        if start < max(HAR_WINDOWS):
            raise InsufficientContext(f"HAR forecasts need {max(HAR_WINDOWS)} prior observations")
        csum = np.concatenate([[0.0], np.cumsum(v)])
        t = np.arange(start, v.size)
        X = np.column_stack([(csum[t] - csum[t - w]) / w for w in HAR_WINDOWS])
        X[:, 0] = v[t - 1]
        return self.predict(X)

    def to_dict(self) -> dict:
        return {"model": self.name, "intercept": self.c, "beta": [float(b) for b in self.beta]}


def fit_har(fm, include_quarterly: bool = False) -> HarModel:
    """OLS of the target on ``(1, V_{t-1}, V_w, V_m[, V_q])``."""
    cols = HAR_COLUMNS[:4 if include_quarterly else 3]
    X = np.column_stack([fm.column(c) for c in cols])
    y = np.asarray(fm.y, dtype=float)
    A = np.column_stack([np.ones(len(y)), X])
    if A.shape[0] < 5 or np.linalg.matrix_rank(A) < A.shape[1]:
        raise SingularDesign("HAR design is rank deficient or too short")
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    beta = np.zeros(4)
    beta[:len(cols)] = coef[1:]
    return HarModel(float(coef[0]), beta, include_quarterly)


# --- ARMA ---------------------------------------------------------------------

@dataclass(frozen=True)
class ArimaOrder:
    p: int = 0
    d: int = 0
    q: int = 0

    def __post_init__(self):
        if not (0 <= self.p <= 5 and 0 <= self.d <= 2 and 0 <= self.q <= 5):
            raise ValueError(f"order out of range: {self}")

    def __str__(self) -> str:
        return f"({self.p},{self.d},{self.q})"


@dataclass
class ArimaModel:
    order: ArimaOrder
    mu: float  # mean of the differenced series (0 when d >= 1)
    ar: np.ndarray
    ma: np.ndarray  # x_t = ... + e_t + sum theta_j e_{t-j}
    sigma2: float
    loglik: float
    n_obs: int
    n_iter: int = 0
    trajectory: list = field(default_factory=list, repr=False)

    @property
    def name(self) -> str:
        o = self.order
        return f"ARIMA({o.p},{o.d},{o.q})" if o.d else f"ARMA({o.p},{o.q})"

    @property
    def n_params(self) -> int:
        return self.order.p + self.order.q + (self.order.d == 0) + 1

    @property
    def aic(self) -> float:
        return 2 * self.n_params - 2 * self.loglik

    def forecast(self, values, start: int) -> np.ndarray:
        v = _values(values)
        o = self.order
        if start < o.d + max(o.p, 1) or start > v.size:
            raise InsufficientContext(f"{self.name} needs at least {o.d + max(o.p, 1)} prior observations")
        w = np.diff(v, n=o.d) if o.d else v
        x = w - self.mu
        e = _innovations(x, self.ar, self.ma)
        # one-step prediction of w at every index of w (index j <-> level index j + d)
        xp = np.zeros_like(x)
        for i, phi in enumerate(self.ar, start=1):
            xp[i:] += phi * x[:-i]
        for j, th in enumerate(self.ma, start=1):
            xp[j:] += th * e[:-j]
        what = xp + self.mu
        t = np.arange(start, v.size)
        level = what[t - o.d]
        for k in range(1, o.d + 1):
            level = level - comb(o.d, k) * (-1) ** k * v[t - k]
        return level

    def to_dict(self) -> dict:
        return {
            "model": self.name,
            "order": [self.order.p, self.order.d, self.order.q],
            "mu": self.mu,
            "ar": [float(a) for a in self.ar],
            "ma": [float(m) for m in self.ma],
            "sigma2": self.sigma2,
            "loglik": self.loglik,
            "aic": self.aic,
        }


def _pacf_to_poly(u):
    """Map unconstrained values to coefficients of a stationary AR polynomial.

    ``r = tanh(u)`` are partial autocorrelations; the Durbin-Levinson
    recursion turns them into ``phi`` with ``1 - sum phi_i z^i`` having all
    roots outside the unit circle. Works for complex input (complex-step
    differentiation).
    """
    r = np.tanh(u)
    phi = np.zeros(0, dtype=r.dtype)
    for k in range(r.size):
        phi = np.concatenate([phi - r[k] * phi[::-1], r[k:k + 1]])
    return phi


def _transform(u, p, q):
    return _pacf_to_poly(u[:p]), -_pacf_to_poly(u[p:p + q])


def _transform_jacobian(u, p, q):
    """Jacobian of ``(phi, theta)`` w.r.t. ``u`` by complex step (exact to roundoff)."""
    n = p + q
    J = np.zeros((n, n))
    h = 1e-30
    for i in range(n):
        uc = u.astype(complex)
        uc[i] += 1j * h
        phi, theta = _transform(uc, p, q)
        J[:, i] = np.concatenate([phi, theta]).imag / h
    return J


def _ar_residual(x, phi):
    """``a_t = x_t - sum phi_i x_{t-i}`` for ``t >= p`` (conditioning on the first p)."""
    p = phi.size
    a = x[p:].copy()
    for i in range(1, p + 1):
        a -= phi[i - 1] * x[p - i:x.size - i]
    return a


def _innovations(x, phi, theta):
    """CSS innovations over the whole series; the first p are set to 0."""
    p = phi.size
    e = np.zeros_like(x)
    a = _ar_residual(x, phi)
    e[p:] = lfilter([1.0], np.concatenate([[1.0], theta]), a)
    return e


def _lag(z, j):
    out = np.zeros_like(z)
    out[j:] = z[:-j]
    return out


def _css_objective(w, p, q, with_mean):
    """Mean squared CSS innovation and its gradient w.r.t. ``(u_ar, u_ma[, mu])``."""
    m = w.size - p

    def fun(params):
        u = params[:p + q]
        mu = params[p + q] if with_mean else 0.0
        phi, theta = _transform(u, p, q)
        x = w - mu
        a = _ar_residual(x, phi)
        den = np.concatenate([[1.0], theta])
        e = lfilter([1.0], den, a)
        f = float(e @ e) / m
        dcoef = np.zeros(p + q)
        for i in range(1, p + 1):
            de = lfilter([1.0], den, -x[p - i:x.size - i])
            dcoef[i - 1] = 2.0 * float(e @ de) / m
        for j in range(1, q + 1):
            de = lfilter([1.0], den, -_lag(e, j))
            dcoef[p + j - 1] = 2.0 * float(e @ de) / m
        grad = _transform_jacobian(u, p, q).T @ dcoef if p + q else np.zeros(0)
        if with_mean:
            de = lfilter([1.0], den, np.full(m, phi.sum() - 1.0))
            grad = np.concatenate([grad, [2.0 * float(e @ de) / m]])
        return f, grad

    return fun


def fit_arma(series, order: ArimaOrder, max_iter: int = 500) -> ArimaModel:
    """CSS fit of an ARMA(p, q) to the ``d``-times differenced series.

    With ``d = 0`` a mean ``mu`` is estimated; with ``d >= 1`` the differenced
    series is taken as zero-mean, so ARIMA(0,1,0) is the random walk.
    """
    if not isinstance(order, ArimaOrder):
        order = ArimaOrder(*order)
    v = _values(series)
    w = np.diff(v, n=order.d) if order.d else v
    p, q = order.p, order.q
    if w.size <= 10 * (p + q + 1):
        raise InsufficientHistory(f"{w.size} observations are too few for order {order}")
    with_mean = order.d == 0
    m = w.size - p
    if p == 0 and q == 0:
        mu = float(w.mean()) if with_mean else 0.0
        e = w - mu
        n_iter, traj = 0, []
        ar = ma = np.zeros(0)
    else:
        fun = _css_objective(w, p, q, with_mean)
        x0 = np.zeros(p + q + with_mean)
        if with_mean:
            x0[-1] = w.mean()
        res = lbfgs_minimize(fun, x0, max_iter=max_iter, gtol=1e-9)
        if not np.isfinite(res.fun):
            raise SingularFit(f"CSS objective is not finite for order {order}")
        if res.reason == "max_iter" and res.grad_norm > 1e-5 * max(1.0, res.fun):
            raise NonConvergence(f"CSS fit of order {order} did not converge (|g|={res.grad_norm:.3g})")
        ar, ma = _transform(res.x[:p + q], p, q)
        mu = float(res.x[-1]) if with_mean else 0.0
        e = _innovations(w - mu, ar, ma)[p:]
        n_iter, traj = res.n_iter, res.trajectory
    sigma2 = float(e @ e) / m
    if not sigma2 > 0:
        raise SingularFit("zero innovation variance")
    loglik = -0.5 * m * (np.log(2 * np.pi * sigma2) + 1.0)
    return ArimaModel(order, mu, np.asarray(ar, float), np.asarray(ma, float), sigma2, float(loglik), m, n_iter, traj)


# --- KPSS and order selection -------------------------------------------------

def kpss_statistic(series, alpha: float = 0.05):
    """Level-stationarity KPSS statistic with a Bartlett long-run variance.

    Bandwidth ``floor(4 (n/100)^(1/4))``. Returns ``(statistic, reject)``.
    """
    x = _values(series)
    n = x.size
    if n < 20:
        raise InsufficientHistory("KPSS needs at least 20 observations")
    e = x - x.mean()
    s0 = float(e @ e) / n
    if not s0 > 1e-300 or np.ptp(x) == 0:
        raise ZeroVariance("series has zero variance")
    lags = int(np.floor(4 * (n / 100) ** 0.25))
    lrv = s0
    for j in range(1, lags + 1):
        lrv += 2 * (1 - j / (lags + 1)) * float(e[j:] @ e[:-j]) / n
    S = np.cumsum(e)
    stat = float(S @ S) / (n * n * lrv)
    return stat, stat > KPSS_CRITICAL[alpha]


@dataclass
class OrderSelection:
    order: ArimaOrder
    model: ArimaModel
    kpss: list  # (d, statistic, reject)
    aic_table: dict  # "(p,d,q)" -> aic
    failures: dict  # "(p,d,q)" -> error message

    def to_dict(self) -> dict:
        return {
            "order": [self.order.p, self.order.d, self.order.q],
            "kpss": [{"d": d, "statistic": s, "reject": bool(r)} for d, s, r in self.kpss],
            "aic": self.aic_table,
            "failures": self.failures,
        }


def select_order(series, max_p: int = 5, max_q: int = 5, threads: int = 1, d: int | None = None) -> OrderSelection:
    """KPSS for ``d`` (unless ``d`` is given), then exhaustive AIC search over ``p, q``.

    Cells whose fit fails are skipped and recorded. Ties in AIC go to the
    earlier cell in ``(p, q)`` order.
    """
    v = _values(series)
    kpss = []
    if d is None:
        d = 2
        for dd in range(3):
            stat, reject = kpss_statistic(np.diff(v, n=dd) if dd else v)
            kpss.append((dd, stat, reject))
            if not reject:
                d = dd
                break
    cells = [ArimaOrder(p, d, q) for p in range(max_p + 1) for q in range(max_q + 1)]

    def run(order):
        try:
            return fit_arma(v, order)
        except KanvixError as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]
    table, failures, best = {}, {}, None
    for order, res in zip(cells, results):
        if isinstance(res, Exception):
            failures[str(order)] = f"{type(res).__name__}: {res}"
            logger.warning("ARIMA%s skipped: %s", order, res)
            continue
        table[str(order)] = res.aic
        if best is None or res.aic < best.aic:
            best = res
    if best is None:
        raise NonConvergence("no ARIMA order could be fitted")
    return OrderSelection(best.order, best, kpss, table, failures)


def rolling_forecast(model, series, start: int) -> np.ndarray:
    """One-step-ahead forecasts for indices ``start..n-1`` from realised values."""
    if model is None or model == "naive":
        model = NaiveModel()
    return model.forecast(_values(series), start)
