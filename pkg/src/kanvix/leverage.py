"""Leverage-effect augmentation of a base forecast.

A one-layer ``[2, 1]`` network maps ``(V̂_t, R^e_{t-1})`` to ``Ṽ_t``. It starts
as the identity on ``V̂_t`` and is trained, as in the original protocol, on
the same rows it is evaluated on (the augmentation is in-sample).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evaluation import MetricsReport, compute_metrics
from .exceptions import EmptyJoin
from .interpret import IDENTITY, NEGATION, ZERO, ClosedForm, collapse, finetune_affine, prune, score, symbolify
from .kan_core import KanNetwork, build_network
from .train import TrainConfig, fit

__all__ = ["LeverageDataset", "LeverageConfig", "LeverageResult", "build_leverage_dataset", "fit_leverage"]

LEVERAGE_CANDIDATES = (ZERO, IDENTITY, NEGATION)
INPUT_NAMES = ["V̂_t", "R^e_{t-1}"]
NONLINEAR_R2 = 0.9


@dataclass
class LeverageDataset:
    dates: np.ndarray
    vhat: np.ndarray
    ret_lag: np.ndarray
    y: np.ndarray
    dropped: int = 0

    def __len__(self) -> int:
        return self.y.size

    @property
    def X(self) -> np.ndarray:
        return np.column_stack([self.vhat, self.ret_lag])


def _lookup(series, dates):
    """Values of ``series`` at ``dates`` and a mask of which dates were found."""
    pos = np.searchsorted(series.dates, dates)
    pos_c = np.minimum(pos, len(series) - 1)
    found = (pos < len(series)) & (series.dates[pos_c] == dates)
    return np.where(found, series.values[pos_c], np.nan), found


def build_leverage_dataset(base, returns, actuals) -> LeverageDataset:
    """Join base forecasts with the previous trading day's excess return.

    ``base`` holds ``V̂_t`` keyed by target date, ``actuals`` the full level
    series (its calendar defines "previous trading day") and ``returns`` the
    excess returns keyed by their own date. Rows lacking any input are
    dropped and counted.
    """
    dates = base.dates
    y, has_y = _lookup(actuals, dates)
    pos = np.searchsorted(actuals.dates, dates)
    has_prev = has_y & (pos >= 1)
    prev = actuals.dates[np.maximum(pos - 1, 0)]
    r, has_r = _lookup(returns, prev)
    keep = has_y & has_prev & has_r
    if not keep.any():
        raise EmptyJoin("no date has a forecast, an actual and a lagged return")
    return LeverageDataset(dates[keep], base.values[keep], r[keep], y[keep], int((~keep).sum()))


@dataclass
class LeverageConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    grid_size: int = 3
    order: int = 3
    # the return edge is small next to the level edge; relative pruning would
    # drop it, so pruning is opt-in here
    threshold: float | None = None
    importance: str = "l1"
    finetune_epochs: int = 30
    finetune_lr: float = 0.0004


@dataclass
class LeverageResult:
    network: KanNetwork
    symbolic: object
    closed_form: ClosedForm
    metrics: MetricsReport
    base_metrics: MetricsReport
    spline_r2: float
    return_edge_r2: float | None
    n_rows: int
    dropped: int

    @property
    def r2_improvement(self) -> float:
        return self.metrics.r2 - self.base_metrics.r2

    @property
    def non_linear_fit_warning(self) -> bool:
        return self.return_edge_r2 is not None and self.return_edge_r2 < NONLINEAR_R2

    def to_dict(self) -> dict:
        return {
            "formula": self.closed_form.render(6),
            "closed_form": self.closed_form.to_dict(),
            "r2": self.metrics.r2,
            "base_r2": self.base_metrics.r2,
            "r2_improvement": self.r2_improvement,
            "spline_r2": self.spline_r2,
            "return_edge_fit_r2": self.return_edge_r2,
            "non_linear_fit_warning": self.non_linear_fit_warning,
            "metrics": self.metrics.to_dict(),
            "n_rows": self.n_rows,
            "dropped_rows": self.dropped,
            "symbolic": self.symbolic.to_dict(),
        }


def _r2(y, pred):
    return float(1.0 - np.sum((y - pred) ** 2) / np.sum((y - y.mean()) ** 2))


def fit_leverage(ds: LeverageDataset, config: LeverageConfig | None = None) -> LeverageResult:
    config = config or LeverageConfig()
    X, y = ds.X, ds.y
    if len(ds) == 0:
        raise EmptyJoin("leverage dataset is empty")
    net = build_network([2, 1], X, config.grid_size, config.order, seed=config.train.seed, init="identity")
    fit(net, (X, y), (X, y), config.train)
    spline_r2 = _r2(y, net(X))
    if config.threshold is not None:
        net = prune(net, score(net, X, kind=config.importance), config.threshold)
    snet = symbolify(net, X, LEVERAGE_CANDIDATES, positive_scale=True)
    snet = finetune_affine(snet, (X, y), (X, y), config.finetune_epochs, config.finetune_lr, config.train)
    cf = collapse(snet, INPUT_NAMES)
    cf.target = "Ṽ_t"
    ret_edge = snet.layers[0].edges[1][0]
    return LeverageResult(
        network=net,
        symbolic=snet,
        closed_form=cf,
        metrics=compute_metrics(y, cf(X)),
        base_metrics=compute_metrics(y, ds.vhat),
        spline_r2=spline_r2,
        return_edge_r2=None if ret_edge is None else ret_edge.r2,
        n_rows=len(ds),
        dropped=ds.dropped,
    )
