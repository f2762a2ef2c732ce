"""Forecast accuracy metrics, Mincer-Zarnowitz F test and Durbin-Watson."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import betainc

from .exceptions import (
    DegenerateForecast,
    InsufficientHistory,
    LengthMismatch,
    NonPositiveActual,
    PerfectForecast,
    ZeroResiduals,
)

__all__ = [
    "MetricsReport",
    "MzResult",
    "DwResult",
    "compute_metrics",
    "mincer_zarnowitz",
    "durbin_watson",
    "f_cdf",
    "f_sf",
]


def _pair(actual, forecast, min_len=2):
    a = np.asarray(actual, dtype=float).ravel()
    f = np.asarray(forecast, dtype=float).ravel()
    if a.shape != f.shape:
        raise LengthMismatch(f"{a.size} actuals vs {f.size} forecasts")
    if a.size < min_len:
        raise InsufficientHistory(f"need at least {min_len} forecast pairs, got {a.size}")
    return a, f


@dataclass
class MetricsReport:
    mse: float
    mae: float
    mape: float  # percent
    r2: float
    qlike: float
    n_test: int

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(actual, forecast) -> MetricsReport:
    """MSE, MAE, MAPE (%), R^2 against the test-period mean, and QLIKE."""
    a, f = _pair(actual, forecast)
    if np.any(a <= 0) or np.any(f <= 0):
        raise NonPositiveActual("MAPE and QLIKE need strictly positive actuals and forecasts")
    err = a - f
    ratio = a / f
    return MetricsReport(
        mse=float(np.mean(err ** 2)),
        mae=float(np.mean(np.abs(err))),
        mape=float(100.0 * np.mean(np.abs(err / a))),
        r2=float(1.0 - np.sum(err ** 2) / np.sum((a - a.mean()) ** 2)),
        qlike=float(np.mean(ratio - np.log(ratio) - 1.0)),
        n_test=int(a.size),
    )


def f_cdf(x, d1, d2):
    """CDF of the F(d1, d2) distribution via the regularised incomplete beta."""
    x = np.asarray(x, dtype=float)
    z = np.where(x > 0, d1 * x / (d1 * x + d2), 0.0)
    out = betainc(d1 / 2.0, d2 / 2.0, z)
    return float(out) if out.ndim == 0 else out


def f_sf(x, d1, d2):
    """Upper tail ``1 - CDF`` computed without cancellation."""
    x = np.asarray(x, dtype=float)
    z = np.where(x > 0, d2 / (d1 * x + d2), 1.0)
    out = betainc(d2 / 2.0, d1 / 2.0, z)
    return float(out) if out.ndim == 0 else out


@dataclass
class MzResult:
    alpha_hat: float
    beta_hat: float
    f_statistic: float
    p_value: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def mincer_zarnowitz(actual, forecast) -> MzResult:
    """Regress actual on (1, forecast); F test of (alpha, beta) = (0, 1)."""
    a, f = _pair(actual, forecast, min_len=10)
    if np.ptp(f) == 0:
        raise DegenerateForecast("forecast is constant")
    A = np.column_stack([np.ones_like(f), f])
    (alpha, beta), *_ = np.linalg.lstsq(A, a, rcond=None)
    resid = a - A @ [alpha, beta]
    rss_u = float(resid @ resid)
    rss_r = float((a - f) @ (a - f))
    if rss_u <= 1e-28 * max(1.0, float(a @ a)):
        raise PerfectForecast("regression residuals are zero")
    n = a.size
    F = max(rss_r - rss_u, 0.0) / 2.0 / (rss_u / (n - 2))
    return MzResult(float(alpha), float(beta), float(F), float(f_sf(F, 2, n - 2)), int(n))


@dataclass
class DwResult:
    statistic: float

    def to_dict(self) -> dict:
        return asdict(self)


def durbin_watson(residuals) -> DwResult:
    e = np.asarray(residuals, dtype=float).ravel()
    if e.size < 2:
        raise InsufficientHistory("Durbin-Watson needs at least two residuals")
    scale = np.max(np.abs(e))
    if scale == 0:
        raise ZeroResiduals("all residuals are zero")
    e = e / scale  # scale-free statistic; avoids underflow in the squares
    denom = float(e @ e)
    d = np.diff(e)
    return DwResult(float(d @ d) / denom)
