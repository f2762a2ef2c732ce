"""Full-batch L-BFGS training with validation-driven decay and early stopping.

An "epoch" is one bounded L-BFGS pass (``iters_per_epoch`` iterations, fresh
curvature history) over the whole training batch. The learning rate scales
the first, gradient-only step of each pass; later steps follow the
quasi-Newton direction with a unit initial trial step.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyBatch, NonFiniteObjective, ShapeMismatch
from .kan_core import KanNetwork, loss_and_gradient

logger = logging.getLogger(__name__)

__all__ = [
    "LbfgsResult",
    "lbfgs_minimize",
    "TrainConfig",
    "TrainResult",
    "StopReason",
    "PlateauSchedule",
    "run_epochs",
    "fit",
]

ARMIJO_C1 = 1e-4
MAX_BACKTRACKS = 30
# near the optimum decreases fall below float resolution; fall back to
# gradient-based (approximate Wolfe) acceptance inside this relative band
ROUNDOFF_BAND = 1e-14
MIN_IMPROVEMENT = 1e-12


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    n_eval: int
    reason: str
    trajectory: list = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.grad))


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a))
    s, y = s_hist[-1], y_hist[-1]
    r = q * ((s @ y) / (y @ y))
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * (y @ r)
        r += s * (a - b)
    return r


def lbfgs_minimize(
    fun,
    x0,
    *,
    history: int = 10,
    learning_rate: float = 1.0,
    max_iter: int = 200,
    gtol: float = 1e-8,
) -> LbfgsResult:
    """Minimise ``fun(x) -> (value, gradient)`` with limited-memory BFGS.

    Steps are accepted by a backtracking Armijo search (halving, at most 30
    trials); once decreases drop below float resolution an approximate Wolfe
    test on the directional derivative takes over. Stops when the gradient
    norm drops below ``gtol``, after ``max_iter`` iterations, or when the line
    search fails twice in a row (the second attempt after discarding the
    curvature history).
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    f = float(f)
    g = np.asarray(g, dtype=float)
    n_eval = 1
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise NonFiniteObjective(f"objective is not finite at the starting point (f={f})")
    s_hist: deque = deque(maxlen=history)
    y_hist: deque = deque(maxlen=history)
    trajectory = [f]
    reason = "max_iter"
    n_iter = 0
    while n_iter < max_iter:
        if np.linalg.norm(g) < gtol:
            reason = "converged"
            break
        if s_hist:
            d = -_two_loop(g, s_hist, y_hist)
            step = 1.0
            if d @ g >= 0:
                s_hist.clear()
                y_hist.clear()
        if not s_hist:
            d = -g
            step = learning_rate * min(1.0, 1.0 / np.abs(g).sum())
        slope = d @ g
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            n_eval += 1
            f_new = float(f_new)
            if np.isfinite(f_new) and np.all(np.isfinite(g_new)):
                if f_new < f and f_new <= f + ARMIJO_C1 * step * slope:
                    accepted = True
                    break
                dslope = np.asarray(g_new) @ d
                if f_new <= f + ROUNDOFF_BAND * abs(f) and 0.9 * slope <= dslope <= -0.8 * slope:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            if s_hist:
                s_hist.clear()
                y_hist.clear()
                continue
            reason = "line_search_failed"
            break
        g_new = np.asarray(g_new, dtype=float)
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-10 * np.sqrt((s @ s) * (y @ y)):
            s_hist.append(s)
            y_hist.append(y)
        x, f, g = x_new, f_new, g_new
        trajectory.append(f)
        n_iter += 1
    return LbfgsResult(x=x, fun=f, grad=g, n_iter=n_iter, n_eval=n_eval, reason=reason, trajectory=trajectory)


@dataclass
class TrainConfig:
    learning_rate: float = 0.04
    decay_factor: float = 0.1
    patience_decay: int = 5
    patience_stop: int = 10
    lbfgs_history: int = 10
    max_epochs: int = 500
    iters_per_epoch: int = 20
    lam: float = 0.0
    mu1: float = 1.0
    mu2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.decay_factor < 1:
            raise ValueError("decay_factor must lie in (0, 1)")
        if not self.patience_decay < self.patience_stop:
            raise ValueError("patience_decay must be smaller than patience_stop")
        if self.max_epochs < 1 or self.iters_per_epoch < 1 or self.lbfgs_history < 1:
            raise ValueError("max_epochs, iters_per_epoch and lbfgs_history must be positive")


class StopReason(str, enum.Enum):
    EARLY_STOPPED = "EarlyStopped"
    MAX_EPOCHS = "MaxEpochs"


class PlateauSchedule:
    """Track validation loss, decay the learning rate on plateaus, signal stops.

    The learning rate decays at most once per stall window; an improvement
    opens a new window.
    """

    def __init__(self, learning_rate, decay_factor=0.1, patience_decay=5, patience_stop=10):
        self.lr = learning_rate
        self.decay_factor = decay_factor
        self.patience_decay = patience_decay
        self.patience_stop = patience_stop
        self.best = np.inf
        self.stall = 0
        self._decayed = False

    def update(self, value: float) -> bool:
        if value < self.best - MIN_IMPROVEMENT:
            self.best = value
            self.stall = 0
            self._decayed = False
            return True
        self.stall += 1
        if self.stall >= self.patience_decay and not self._decayed:
            self.lr *= self.decay_factor
            self._decayed = True
        return False

    @property
    def should_stop(self) -> bool:
        return self.stall >= self.patience_stop


@dataclass
class TrainResult:
    model: object
    epochs: int
    train_history: list
    valid_history: list
    best_valid_loss: float
    best_epoch: int
    stop_reason: StopReason
    lr_history: list

    @property
    def network(self):
        return self.model

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "best_valid_loss": self.best_valid_loss,
            "stop_reason": self.stop_reason.value,
            "train_loss": list(self.train_history),
            "valid_loss": list(self.valid_history),
            "learning_rate": list(self.lr_history),
        }


def run_epochs(model, objective, valid_loss, config: TrainConfig, max_epochs=None) -> TrainResult:
    """Generic epoch loop shared by spline training and affine fine-tuning.

    ``model`` exposes ``get_params``/``set_params``; ``objective(theta)``
    returns ``(loss, gradient)`` and ``valid_loss(theta)`` a float. History
    entry 0 is the starting point. On return the model holds the parameters
    with the lowest validation loss seen.
    """
    max_epochs = config.max_epochs if max_epochs is None else max_epochs
    theta = model.get_params().copy()
    sched = PlateauSchedule(config.learning_rate, config.decay_factor, config.patience_decay, config.patience_stop)
    train_hist = [float(objective(theta)[0])]
    valid_hist = [float(valid_loss(theta))]
    lr_hist = [sched.lr]
    sched.update(valid_hist[0])
    best_theta, best_epoch = theta.copy(), 0
    reason = StopReason.MAX_EPOCHS
    for epoch in range(1, max_epochs + 1):
        res = lbfgs_minimize(
            objective,
            theta,
            history=config.lbfgs_history,
            learning_rate=sched.lr,
            max_iter=config.iters_per_epoch,
        )
        theta = res.x
        v = float(valid_loss(theta))
        train_hist.append(res.fun)
        valid_hist.append(v)
        logger.info("epoch=%d train=%.6g valid=%.6g lr=%.3g", epoch, res.fun, v, sched.lr)
        if sched.update(v):
            best_theta, best_epoch = theta.copy(), epoch
        lr_hist.append(sched.lr)
        if sched.should_stop:
            reason = StopReason.EARLY_STOPPED
            break
    model.set_params(best_theta)
    return TrainResult(
        model=model,
        epochs=len(valid_hist) - 1,
        train_history=train_hist,
        valid_history=valid_hist,
        best_valid_loss=valid_hist[best_epoch],
        best_epoch=best_epoch,
        stop_reason=reason,
        lr_history=lr_hist,
    )


def as_xy(data):
    """Accept a FeatureMatrix-like object (``.X``, ``.y``) or an ``(X, y)`` pair."""
    if hasattr(data, "X") and hasattr(data, "y"):
        X, y = data.X, data.y
    else:
        X, y = data
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyBatch("need a nonempty 2-D feature batch")
    if X.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"{X.shape[0]} rows but {y.shape[0]} targets")
    return X, y


def fit(net: KanNetwork, train, valid, config: TrainConfig | None = None) -> TrainResult:
    """Train ``net`` in place on the full training batch."""
    config = config or TrainConfig()
    Xt, yt = as_xy(train)
    Xv, yv = as_xy(valid)
    for X in (Xt, Xv):
        if X.shape[1] != net.shape[0]:
            raise ShapeMismatch(f"network expects {net.shape[0]} features, got {X.shape[1]}")

    def objective(theta):
        net.set_params(theta)
        return loss_and_gradient(net, Xt, yt, config.lam, config.mu1, config.mu2)

    def valid_loss(theta):
        net.set_params(theta)
        return float(np.sum((yv - net(Xv)) ** 2))

    return run_epochs(net, objective, valid_loss, config)
