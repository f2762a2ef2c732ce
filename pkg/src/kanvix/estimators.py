"""scikit-learn style wrappers around the network, HAR and ARIMA models.

The estimators follow the usual conventions: hyperparameters are stored
verbatim by ``__init__``, learned state ends in ``_`` and is set by ``fit``.
Validation data for early stopping is either passed explicitly or taken as
the chronological tail of the training rows.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .benchmarks import HAR_COLUMNS, ArimaOrder, fit_arma, fit_har, rolling_forecast, select_order
from .data import FeatureMatrix
from .interpret import (
    DEFAULT_THRESHOLD,
    VIX_CANDIDATES,
    collapse,
    finetune_affine,
    prune,
    score,
    symbolify,
)
from .kan_core import build_network
from .train import TrainConfig, fit

__all__ = ["KANRegressor", "SymbolicKANRegressor", "HARRegressor", "ARIMAForecaster"]


def _holdout(X, y, X_valid, y_valid, fraction):
    if X_valid is not None:
        X_valid, y_valid = check_X_y(X_valid, y_valid, y_numeric=True)
        return X, y, X_valid, y_valid
    if not 0 < fraction < 1:
        raise ValueError("validation_fraction must lie in (0, 1)")
    n_valid = max(1, int(round(fraction * len(y))))
    if n_valid >= len(y):
        raise ValueError("too few rows to hold out a validation tail")
    return X[:-n_valid], y[:-n_valid], X[-n_valid:], y[-n_valid:]


class KANRegressor(RegressorMixin, BaseEstimator):
    """Spline network ``[n_features, *hidden, 1]`` trained by L-BFGS.

    Parameters
    ----------
    hidden : tuple of int
        Hidden layer widths; ``()`` gives a single layer.
    validation_fraction : float
        Share of rows, taken from the end, used for early stopping when
        ``fit`` receives no explicit validation set.
    """

    def __init__(self, hidden=(2,), grid_size=3, order=3, learning_rate=0.04, max_epochs=500,
                 iters_per_epoch=20, lam=0.0, mu1=1.0, mu2=1.0, init="random",
                 validation_fraction=0.1, random_state=0):
        self.hidden = hidden
        self.grid_size = grid_size
        self.order = order
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.iters_per_epoch = iters_per_epoch
        self.lam = lam
        self.mu1 = mu1
        self.mu2 = mu2
        self.init = init
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            max_epochs=self.max_epochs,
            iters_per_epoch=self.iters_per_epoch,
            lam=self.lam,
            mu1=self.mu1,
            mu2=self.mu2,
            seed=int(self.random_state or 0),
        )

    def fit(self, X, y, X_valid=None, y_valid=None):
        X, y = check_X_y(X, y, y_numeric=True)
        Xt, yt, Xv, yv = _holdout(X, y, X_valid, y_valid, self.validation_fraction)
        shape = [X.shape[1], *self.hidden, 1]
        cfg = self._train_config()
        self.network_ = build_network(shape, Xt, self.grid_size, self.order, seed=cfg.seed, init=self.init)
        self.history_ = fit(self.network_, (Xt, yt), (Xv, yv), cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X)
        return self.network_(X)


class SymbolicKANRegressor(KANRegressor):
    """Train, prune, replace edges by affine fits, fine-tune and collapse.

    After ``fit`` the model predicts with ``closed_form_``, a single linear
    formula of the inputs; ``feature_names`` label its terms.
    """

    def __init__(self, hidden=(2,), grid_size=3, order=3, learning_rate=0.04, max_epochs=500,
                 iters_per_epoch=20, lam=0.0, mu1=1.0, mu2=1.0, init="random",
                 validation_fraction=0.1, random_state=0, threshold=DEFAULT_THRESHOLD,
                 importance="l1", candidates=VIX_CANDIDATES, finetune_epochs=30,
                 finetune_lr=0.0004, feature_names=None):
        super().__init__(hidden, grid_size, order, learning_rate, max_epochs, iters_per_epoch,
                         lam, mu1, mu2, init, validation_fraction, random_state)
        self.threshold = threshold
        self.importance = importance
        self.candidates = candidates
        self.finetune_epochs = finetune_epochs
        self.finetune_lr = finetune_lr
        self.feature_names = feature_names

    def fit(self, X, y, X_valid=None, y_valid=None):
        X, y = check_X_y(X, y, y_numeric=True)
        Xt, yt, Xv, yv = _holdout(X, y, X_valid, y_valid, self.validation_fraction)
        super().fit(Xt, yt, Xv, yv)
        net = self.network_
        if self.threshold is not None:
            net = prune(net, score(net, Xt, kind=self.importance), self.threshold)
        self.pruned_network_ = net
        snet = symbolify(net, Xt, self.candidates)
        self.symbolic_ = finetune_affine(snet, (Xt, yt), (Xv, yv), self.finetune_epochs, self.finetune_lr,
                                         self._train_config())
        self.closed_form_ = collapse(self.symbolic_, self.feature_names)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "closed_form_")
        X = check_array(X)
        return self.closed_form_(X)


class HARRegressor(RegressorMixin, BaseEstimator):
    """OLS on the first three (or, with ``quarterly``, four) feature columns,
    which must be the lag, weekly, monthly and quarterly levels in that order."""

    def __init__(self, quarterly=False):
        self.quarterly = quarterly

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        k = 4 if self.quarterly else 3
        if X.shape[1] < k:
            raise ValueError(f"need {k} feature columns, got {X.shape[1]}")
        names = list(HAR_COLUMNS)[:X.shape[1]] + [f"x{i}" for i in range(4, X.shape[1])]
        fm = FeatureMatrix(names, X, y, np.arange(len(y)))
        self.model_ = fit_har(fm, self.quarterly)
        self.intercept_ = self.model_.c
        self.coef_ = self.model_.beta[:k].copy()
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return self.model_.predict(X)


class ARIMAForecaster(BaseEstimator):
    """Univariate ARIMA fitted by conditional sum of squares.

    ``order=None`` selects ``d`` by KPSS and ``(p, q)`` by AIC. ``predict``
    returns one-step-ahead forecasts for positions ``start..`` of a series
    whose earlier values serve as context.
    """

    def __init__(self, order=None, max_p=5, max_q=5, threads=1):
        self.order = order
        self.max_p = max_p
        self.max_q = max_q
        self.threads = threads

    def fit(self, y, X=None):
        y = check_array(np.asarray(y, dtype=float).reshape(-1, 1)).ravel()
        if self.order is None:
            self.selection_ = select_order(y, self.max_p, self.max_q, self.threads)
            self.model_ = self.selection_.model
        else:
            self.selection_ = None
            self.model_ = fit_arma(y, ArimaOrder(*self.order))
        self.order_ = self.model_.order
        return self

    def predict(self, y, start):
        check_is_fitted(self, "model_")
        return rolling_forecast(self.model_, np.asarray(y, dtype=float), start)
