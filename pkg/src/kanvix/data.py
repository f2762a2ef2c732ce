"""Series loading, lag/average features, chronological splits and synthetic data."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import (
    DuplicateDate,
    EmptySegment,
    InsufficientHistory,
    MissingRate,
    ParseError,
    ShapeMismatch,
)

__all__ = [
    "TimeSeries",
    "load_csv",
    "DatasetSpec",
    "FeatureMatrix",
    "build_features",
    "SplitSpec",
    "PERIODS",
    "split",
    "excess_returns",
    "SyntheticOuConfig",
    "simulate_ou",
]

LAG_NAME = "V_{{t-{}}}"
AVERAGE_WINDOWS = {"V_w": 5, "V_m": 21, "V_q": 63}


@dataclass
class TimeSeries:
    dates: np.ndarray  # datetime64[D]
    values: np.ndarray
    name: str = "value"

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.values = np.asarray(self.values, dtype=float)
        if self.dates.shape != self.values.shape or self.values.ndim != 1:
            raise ShapeMismatch("dates and values must be 1-D and of equal length")
        if self.dates.size > 1 and not np.all(np.diff(self.dates) > np.timedelta64(0, "D")):
            raise ValueError("dates must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")

    def __len__(self) -> int:
        return self.values.size

    def restrict(self, start=None, end=None) -> "TimeSeries":
        """Rows with ``start <= date <= end`` (either bound optional)."""
        mask = np.ones(len(self), dtype=bool)
        if start is not None:
            mask &= self.dates >= np.datetime64(start, "D")
        if end is not None:
            mask &= self.dates <= np.datetime64(end, "D")
        return TimeSeries(self.dates[mask], self.values[mask], self.name)


def load_csv(path, date_column: str = "date", value_column: str = "close") -> TimeSeries:
    """Read a headered CSV with ISO dates; rows come back sorted by date.

    Empty or ``"."`` values (the FRED missing-value marker) are skipped;
    anything else that does not parse raises :class:`ParseError` with the
    1-based file line number.
    """
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or date_column not in reader.fieldnames or value_column not in reader.fieldnames:
            raise ParseError(f"{path}: header must contain {date_column!r} and {value_column!r}", 1)
        for line_no, row in enumerate(reader, start=2):
            raw_date, raw_value = (row.get(date_column) or "").strip(), (row.get(value_column) or "").strip()
            if raw_value in ("", "."):
                continue
            try:
                date = dt.date.fromisoformat(raw_date)
                value = float(raw_value)
            except ValueError as exc:
                raise ParseError(f"{path}: line {line_no}: cannot parse {raw_date!r}, {raw_value!r}", line_no) from exc
            if not np.isfinite(value):
                raise ParseError(f"{path}: line {line_no}: non-finite value {raw_value!r}", line_no)
            rows.append((date, value))
    rows.sort(key=lambda r: r[0])
    for (d1, _), (d2, _) in zip(rows, rows[1:]):
        if d1 == d2:
            raise DuplicateDate(d1.isoformat())
    dates = np.array([r[0] for r in rows], dtype="datetime64[D]")
    values = np.array([r[1] for r in rows], dtype=float)
    return TimeSeries(dates, values, value_column)


@dataclass(frozen=True)
class DatasetSpec:
    """Feature recipe: ``D1`` lags 1-5, ``D2`` lags 1/5/10/21, ``D3`` lag 1 plus
    5/21/63-day averages, or ``custom`` with explicit ``lags``."""

    kind: str = "D3"
    lags: tuple = ()

    def __post_init__(self):
        kind = self.kind.upper() if self.kind.lower() != "custom" else "custom"
        object.__setattr__(self, "kind", kind)
        if kind == "D1":
            object.__setattr__(self, "lags", (1, 2, 3, 4, 5))
        elif kind == "D2":
            object.__setattr__(self, "lags", (1, 5, 10, 21))
        elif kind == "D3":
            object.__setattr__(self, "lags", (1,))
        elif kind == "custom":
            lags = tuple(int(l) for l in self.lags)
            if not lags or lags[0] < 1 or any(b <= a for a, b in zip(lags, lags[1:])):
                raise ValueError("custom lags must be positive and strictly increasing")
            object.__setattr__(self, "lags", lags)
        else:
            raise ValueError(f"unknown dataset kind {self.kind!r}")

    @property
    def names(self) -> list:
        names = [LAG_NAME.format(l) for l in self.lags]
        if self.kind == "D3":
            names += list(AVERAGE_WINDOWS)
        return names

    @property
    def lookback(self) -> int:
        if self.kind == "D3":
            return max(AVERAGE_WINDOWS.values())
        return max(self.lags)


@dataclass
class FeatureMatrix:
    names: list
    X: np.ndarray
    y: np.ndarray
    dates: np.ndarray
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.y.size

    def rows(self, idx) -> "FeatureMatrix":
        return FeatureMatrix(list(self.names), self.X[idx], self.y[idx], self.dates[idx],
                             {k: v[idx] for k, v in self.extra.items()})

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["date", *self.names, "target"])
            for d, x, y in zip(self.dates, self.X, self.y):
                w.writerow([str(d), *(repr(float(v)) for v in x), repr(float(y))])


def build_features(series: TimeSeries, spec: DatasetSpec) -> FeatureMatrix:
    """Rows ``(features at t-1 and earlier, target V_t)`` in trading-day steps.

    The first target is the observation at 0-based index ``lookback``.
    """
    v = series.values
    L = spec.lookback
    if v.size <= L:
        raise InsufficientHistory(f"{spec.kind} needs more than {L} observations, got {v.size}")
    t = np.arange(L, v.size)
    cols = [v[t - l] for l in spec.lags]
    if spec.kind == "D3":
        for w in AVERAGE_WINDOWS.values():
            # window ending at t-1 covers t-w .. t-1
            means = sliding_window_view(v, w).mean(axis=1)  # means[j] = mean(v[j:j+w])
            cols.append(means[t - w])
    X = np.column_stack(cols)
    return FeatureMatrix(spec.names, X, v[t].copy(), series.dates[t].copy())


@dataclass(frozen=True)
class SplitSpec:
    """Either integer ``ratios`` (train, valid, test) or date ``boundaries``
    ``(valid_start, test_start)``; rows go by target date."""

    ratios: tuple | None = None
    boundaries: tuple | None = None

    def __post_init__(self):
        if (self.ratios is None) == (self.boundaries is None):
            raise ValueError("give exactly one of ratios or boundaries")
        if self.ratios is not None:
            r = tuple(int(x) for x in self.ratios)
            if len(r) != 3 or min(r) < 0 or sum(r) == 0:
                raise ValueError("ratios must be three nonnegative integers")
            object.__setattr__(self, "ratios", r)
        else:
            b = tuple(np.datetime64(x, "D") for x in self.boundaries)
            if len(b) != 2 or not b[0] < b[1]:
                raise ValueError("boundaries must be (valid_start, test_start) in order")
            object.__setattr__(self, "boundaries", b)


PERIODS = {
    "P1": SplitSpec(boundaries=("2016-01-01", "2018-01-01")),
    "P2": SplitSpec(boundaries=("2018-01-01", "2020-01-01")),
    "P3": SplitSpec(boundaries=("2020-01-01", "2022-01-01")),
}


def split(fm: FeatureMatrix, spec: SplitSpec):
    """Chronological contiguous (train, valid, test) segments."""
    n = len(fm)
    if n == 0:
        raise EmptySegment("nothing to split")
    if spec.ratios is not None:
        r = np.array(spec.ratios)
        sizes = n * r // r.sum()
        sizes[0] += n - sizes.sum()
        cuts = np.cumsum(sizes)[:2]
    else:
        cuts = np.searchsorted(fm.dates, np.array(spec.boundaries))
    bounds = [0, int(cuts[0]), int(cuts[1]), n]
    parts = []
    for name, lo, hi in zip(("train", "valid", "test"), bounds[:-1], bounds[1:]):
        if hi <= lo:
            raise EmptySegment(f"{name} segment is empty")
        parts.append(fm.rows(slice(lo, hi)))
    return tuple(parts)


def excess_returns(prices: TimeSeries, rf_annualized: TimeSeries) -> TimeSeries:
    """Daily simple return minus the daily risk-free rate, times 100.

    The annualised percent yield is forward-filled onto the price dates and
    converted as ``yield / 252 / 100``. The first price has no return.
    """
    if len(prices) < 2:
        raise ShapeMismatch("need at least two prices")
    pos = np.searchsorted(rf_annualized.dates, prices.dates[1:], side="right") - 1
    if np.any(pos < 0):
        first = prices.dates[1:][pos < 0][0]
        raise MissingRate(f"no risk-free rate on or before {first}")
    rf_daily = rf_annualized.values[pos] / 252.0 / 100.0
    p = prices.values
    r = (p[1:] / p[:-1] - 1.0 - rf_daily) * 100.0
    return TimeSeries(prices.dates[1:], r, "excess_return")


@dataclass(frozen=True)
class SyntheticOuConfig:
    kappa: float = 0.15
    theta: float = 20.0
    noise_scale: float = 1.0
    n: int = 4000
    seed: int = 0
    v0: float | None = None
    start: str = "2000-01-03"

    def __post_init__(self):
        if not 0 < self.kappa < 2:
            raise ValueError("kappa must lie in (0, 2)")
        if not self.theta > 0 or self.noise_scale < 0 or self.n < 1:
            raise ValueError("need theta > 0, noise_scale >= 0, n >= 1")


OU_FLOOR = 0.01


def simulate_ou(config: SyntheticOuConfig) -> TimeSeries:
    """Discrete mean-reverting path ``V_t = V_{t-1} + kappa (theta - V_{t-1}) + s z_t``.

    ``V_0 = v0`` (default ``theta``) is the first returned value; values are
    floored at 0.01. Dates are consecutive business days from ``start``.
    """
    rng = np.random.default_rng(config.seed)
    z = rng.standard_normal(config.n - 1)
    v = np.empty(config.n)
    v[0] = config.theta if config.v0 is None else config.v0
    k, th, s = config.kappa, config.theta, config.noise_scale
    for i in range(1, config.n):
        v[i] = max(v[i - 1] + k * (th - v[i - 1]) + s * z[i - 1], OU_FLOOR)
    start = np.datetime64(config.start, "D")
    first = np.busday_offset(start, 0, roll="forward")
    dates = np.busday_offset(first, np.arange(config.n))
    return TimeSeries(dates, v, "V")
