"""Pruning, symbolification and closed-form extraction for trained networks.

The workflow after spline training is

    report = score(net, X)
    net = prune(net, report, threshold=0.01)
    snet = symbolify(net, X)
    snet = finetune_affine(snet, train, valid)
    cf = collapse(snet, names)

A symbolic edge computes ``c * f(a * x + b) + d`` for a candidate ``f``. With
the affine candidates shipped here (zero, identity, negation) the whole
network is an affine map of its inputs, which ``collapse`` makes explicit.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    AllPruned,
    DegenerateSamples,
    EmptyBatch,
    MissingFeature,
    NonAffineEdge,
    NonFiniteObjective,
    ParseError,
    ShapeMismatch,
)
from .kan_core import KanNetwork, edge_norms, forward
from .train import TrainConfig, as_xy, run_epochs

__all__ = [
    "ImportanceReport",
    "SymbolicCandidate",
    "SymbolicEdge",
    "SymbolicNetwork",
    "ClosedForm",
    "ZERO",
    "IDENTITY",
    "NEGATION",
    "VIX_CANDIDATES",
    "score",
    "prune",
    "fit_symbolic",
    "symbolify",
    "finetune_affine",
    "collapse",
    "parse_formula",
    "mean_reversion_report",
]

DEFAULT_THRESHOLD = 0.01
# R^2 values this close count as a tie; the earlier candidate wins
R2_TIE = 1e-10


# --- importance and pruning ---------------------------------------------------

@dataclass
class ImportanceReport:
    """Per-layer edge importances ``(n_in, n_out)`` and per-node importances.

    ``nodes[l]`` holds one value per node of layer ``l`` (inputs first, output
    last). Hidden nodes score ``min(max incoming, max outgoing)``; input nodes
    have only outgoing edges and the output node only incoming ones.
    """

    edges: list
    nodes: list

    def to_dict(self) -> dict:
        return {
            "edges": [e.tolist() for e in self.edges],
            "nodes": [n.tolist() for n in self.nodes],
        }


def score(net: KanNetwork, X, kind: str = "l1") -> ImportanceReport:
    """Edge and node importances over the batch ``X``.

    ``kind="l1"`` scores an edge by its mean absolute activation. Constant
    offsets can move freely between edges feeding the same node, so an
    uninformative edge may carry part of an intercept and look important;
    ``kind="std"`` scores the spread of the activation instead, which ignores
    such offsets.
    """
    X = np.asarray(X.X if hasattr(X, "X") else X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyBatch("importance scores need a nonempty batch")
    _, trace = forward(net, X)
    if kind == "l1":
        edges = [edge_norms(layer, lt) for layer, lt in zip(net.layers, trace.layers)]
    elif kind == "std":
        edges = [np.where(layer.active, lt.phi.std(axis=0), 0.0) for layer, lt in zip(net.layers, trace.layers)]
    else:
        raise ValueError(f"unknown importance kind {kind!r}")
    nodes = [edges[0].max(axis=1)]
    for l in range(1, len(edges)):
        nodes.append(np.minimum(edges[l - 1].max(axis=0), edges[l].max(axis=1)))
    nodes.append(edges[-1].max(axis=0))
    return ImportanceReport(edges=edges, nodes=nodes)


def _cascade(net: KanNetwork) -> None:
    """Drop hidden nodes that lost all incoming or all outgoing edges."""
    changed = True
    while changed:
        changed = False
        for l in range(1, len(net.layers)):
            left, right = net.layers[l - 1], net.layers[l]
            for node in range(right.n_in):
                has_in = left.active[:, node].any()
                has_out = right.active[node, :].any()
                if has_in != has_out:
                    left.active[:, node] = False
                    right.active[node, :] = False
                    changed = True


def _connected(net: KanNetwork) -> bool:
    reach = np.ones(net.shape[0], dtype=bool)
    for layer in net.layers:
        reach = (reach[:, None] & layer.active).any(axis=0)
    return bool(reach[0])


def prune(net: KanNetwork, report: ImportanceReport, threshold: float = DEFAULT_THRESHOLD) -> KanNetwork:
    """Return a copy with low-importance edges and hidden nodes deactivated.

    An edge goes when its importance is below ``threshold`` times the largest
    edge importance of its layer; a hidden node likewise relative to its
    layer's largest node importance. Nodes left without incoming or outgoing
    edges are removed with all their edges, repeatedly.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    out = net.copy()
    for layer, imp in zip(out.layers, report.edges):
        cut = threshold * imp.max()
        layer.active &= ~(imp < cut)
    for l in range(1, len(out.layers)):
        imp = report.nodes[l]
        weak = imp < threshold * imp.max()
        out.layers[l - 1].active[:, weak] = False
        out.layers[l].active[weak, :] = False
    _cascade(out)
    if not _connected(out):
        raise AllPruned("no active path from the inputs to the output remains")
    return out


# --- symbolic fitting ---------------------------------------------------------

@dataclass(frozen=True)
class SymbolicCandidate:
    """A univariate function offered to the symbolic fit.

    ``slope`` is set for affine candidates (``f(u) = slope * u``); those are
    fitted exactly by least squares and can be collapsed.
    """

    name: str
    f: object
    df: object
    slope: float | None = None

    @property
    def affine(self) -> bool:
        return self.slope is not None


ZERO = SymbolicCandidate("0", lambda u: np.zeros_like(u), lambda u: np.zeros_like(u), 0.0)
IDENTITY = SymbolicCandidate("x", lambda u: u, lambda u: np.ones_like(u), 1.0)
NEGATION = SymbolicCandidate("-x", lambda u: -u, lambda u: -np.ones_like(u), -1.0)
VIX_CANDIDATES = (ZERO, IDENTITY)


@dataclass
class SymbolicEdge:
    candidate: SymbolicCandidate
    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    r2: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.c * self.candidate.f(self.a * x + self.b) + self.d

    def to_dict(self) -> dict:
        return {"candidate": self.candidate.name, "a": self.a, "b": self.b, "c": self.c, "d": self.d, "r2": self.r2}


def _r2(y, resid) -> float:
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if np.ptp(y) == 0 or ss_tot == 0:
        # constant target (or variance below float range): perfect only if reproduced up to roundoff
        return 1.0 if ss_res <= 1e-20 * max(1.0, float(y @ y)) else 0.0
    return 1.0 - ss_res / ss_tot


def _ols_cd(fu, y):
    A = np.column_stack([fu, np.ones_like(fu)])
    (c, d), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(c), float(d)


def _search_ab(cand, x, y):
    """Coarse (21 x 21) then 10x finer grid over (a, b); OLS for (c, d)."""

    def best_of(a_vals, b_vals, best):
        for a in a_vals:
            for b in b_vals:
                fu = cand.f(a * x + b)
                if not np.all(np.isfinite(fu)):
                    continue
                c, d = _ols_cd(fu, y)
                r2 = _r2(y, y - (c * fu + d))
                if best is None or r2 > best[0] + R2_TIE:
                    best = (r2, a, b, c, d)
        return best

    mags = np.logspace(-1, 1, 21)
    a_grid = np.concatenate([-mags[::-1], mags])
    b_grid = np.linspace(x.min(), x.max(), 21)
    best = best_of(a_grid, b_grid, None)
    _, a0, b0, _, _ = best
    step_log = np.log10(mags[1] / mags[0])
    fine_a = np.sign(a0) * np.logspace(np.log10(abs(a0)) - step_log, np.log10(abs(a0)) + step_log, 21)
    db = b_grid[1] - b_grid[0]
    fine_b = np.linspace(b0 - db, b0 + db, 21)
    return best_of(fine_a, fine_b, best)


def fit_symbolic(x, y, candidates=VIX_CANDIDATES, positive_scale: bool = False) -> SymbolicEdge:
    """Fit ``c * f(a x + b) + d`` to samples for each candidate, keep the best R^2.

    Affine candidates are solved in closed form with ``a = 1, b = 0``. Ties
    (R^2 within 1e-10) go to the earlier candidate. With ``positive_scale``
    a sign candidate pair (x, -x) is resolved so that ``c >= 0``.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ShapeMismatch("x and y samples differ in length")
    if x.size == 0 or np.ptp(x) == 0:
        raise DegenerateSamples("symbolic fit needs at least two distinct x values")
    best = None
    for cand in candidates:
        if cand.affine:
            if cand.slope == 0:
                a, b, c, d = 1.0, 0.0, 0.0, float(y.mean())
                r2 = _r2(y, y - d)
            else:
                a, b = 1.0, 0.0
                c, d = _ols_cd(cand.f(x), y)
                r2 = _r2(y, y - (c * cand.f(x) + d))
        else:
            r2, a, b, c, d = _search_ab(cand, x, y)
        if best is None or r2 > best.r2 + R2_TIE:
            best = SymbolicEdge(cand, float(a), float(b), float(c), float(d), float(r2))
    if positive_scale and best.candidate.affine and best.c < 0 and best.candidate.slope != 0:
        flipped = {1.0: NEGATION, -1.0: IDENTITY}[best.candidate.slope]
        if any(c is flipped for c in candidates):
            best = SymbolicEdge(flipped, best.a, best.b, -best.c, best.d, best.r2)
    return best


# --- symbolic network ---------------------------------------------------------

@dataclass
class SymbolicLayer:
    edges: list  # n_in x n_out nested lists, None for inactive edges

    @property
    def n_in(self) -> int:
        return len(self.edges)

    @property
    def n_out(self) -> int:
        return len(self.edges[0])

    @property
    def active(self) -> np.ndarray:
        return np.array([[e is not None for e in row] for row in self.edges], dtype=bool)


@dataclass
class SymbolicNetwork:
    layers: list = field(default_factory=list)

    @property
    def shape(self) -> list:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    def _active_edges(self):
        for layer in self.layers:
            for row in layer.edges:
                for e in row:
                    if e is not None:
                        yield e

    def get_params(self) -> np.ndarray:
        return np.array([[e.a, e.b, e.c, e.d] for e in self._active_edges()], dtype=float).ravel()

    def set_params(self, theta) -> None:
        theta = np.asarray(theta, dtype=float).reshape(-1, 4)
        for e, (a, b, c, d) in zip(self._active_edges(), theta):
            e.a, e.b, e.c, e.d = float(a), float(b), float(c), float(d)

    def copy(self) -> "SymbolicNetwork":
        return SymbolicNetwork([
            SymbolicLayer([[None if e is None else SymbolicEdge(e.candidate, e.a, e.b, e.c, e.d, e.r2) for e in row]
                           for row in layer.edges])
            for layer in self.layers
        ])

    def _forward(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        h = X[None, :] if single else X
        if h.ndim != 2 or h.shape[1] != self.shape[0]:
            raise ShapeMismatch(f"network expects {self.shape[0]} inputs, got shape {X.shape}")
        inputs = []
        for layer in self.layers:
            inputs.append(h)
            out = np.zeros((h.shape[0], layer.n_out))
            for q, row in enumerate(layer.edges):
                for p, e in enumerate(row):
                    if e is not None:
                        out[:, p] += e(h[:, q])
            h = out
        return h[:, 0], inputs, single

    def __call__(self, X):
        out, _, single = self._forward(X)
        return float(out[0]) if single else out

    def loss_and_gradient(self, X, y):
        """Sum of squared errors and its gradient in :meth:`get_params` order."""
        pred, inputs, _ = self._forward(X)
        y = np.asarray(y, dtype=float).ravel()
        r = pred - y
        loss = float(r @ r)
        delta = (2.0 * r)[:, None]  # dL/d(node) for the current layer's outputs
        grads = []
        for layer, h in zip(reversed(self.layers), reversed(inputs)):
            back = np.zeros_like(h)
            layer_grads = []
            for q, row in enumerate(layer.edges):
                for p, e in enumerate(row):
                    if e is None:
                        continue
                    u = e.a * h[:, q] + e.b
                    fu = e.candidate.f(u)
                    dfu = e.candidate.df(u)
                    g = delta[:, p]
                    layer_grads.append([
                        float(g @ (e.c * dfu * h[:, q])),
                        float(g @ (e.c * dfu)),
                        float(g @ fu),
                        float(g.sum()),
                    ])
                    back[:, q] += g * e.c * dfu * e.a
            grads.append(layer_grads)
            delta = back
        flat = [g for layer_grads in reversed(grads) for g in layer_grads]
        return loss, np.array(flat, dtype=float).ravel()

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "layers": [
                [{"q": q, "p": p, **e.to_dict()} for q, row in enumerate(layer.edges) for p, e in enumerate(row)
                 if e is not None]
                for layer in self.layers
            ],
        }


def symbolify(net: KanNetwork, X, candidates=VIX_CANDIDATES, positive_scale: bool = False,
              edge_candidates: dict | None = None) -> SymbolicNetwork:
    """Replace every active spline edge by its best symbolic fit.

    Samples are the edge's inputs and activations on the batch ``X``.
    ``edge_candidates`` maps ``(layer, q, p)`` to a candidate tuple that
    overrides ``candidates`` for that edge. Inactive edges stay inactive and
    edges whose input is constant on ``X`` become ``ZERO`` plus an offset.
    """
    X = np.asarray(X.X if hasattr(X, "X") else X, dtype=float)
    _, trace = forward(net, X)
    edge_candidates = edge_candidates or {}
    layers = []
    for l, (layer, lt) in enumerate(zip(net.layers, trace.layers)):
        edges = [[None] * layer.n_out for _ in range(layer.n_in)]
        for q in range(layer.n_in):
            for p in range(layer.n_out):
                if layer.active[q, p]:
                    x, phi = lt.x[:, q], lt.phi[:, q, p]
                    if np.ptp(x) == 0:
                        # constant input: the edge is a constant, folded into d
                        edges[q][p] = SymbolicEdge(ZERO, d=float(phi.mean()))
                        continue
                    cands = edge_candidates.get((l, q, p), candidates)
                    edges[q][p] = fit_symbolic(x, phi, cands, positive_scale)
        layers.append(SymbolicLayer(edges))
    return SymbolicNetwork(layers)


def finetune_affine(snet: SymbolicNetwork, train, valid, epochs: int = 30, lr: float = 0.0004,
                    config: TrainConfig | None = None) -> SymbolicNetwork:
    """Jointly refine every ``(a, b, c, d)`` by L-BFGS on the squared error.

    Returns a copy holding the parameters with the best validation loss; the
    starting point counts as a candidate, so the training loss never rises.
    """
    Xt, yt = as_xy(train)
    Xv, yv = as_xy(valid)
    out = snet.copy()
    theta0 = out.get_params()
    if theta0.size == 0:
        return out
    base = config or TrainConfig()
    cfg = TrainConfig(**{**base.__dict__, "learning_rate": lr, "max_epochs": epochs})

    def objective(theta):
        out.set_params(theta)
        return out.loss_and_gradient(Xt, yt)

    def valid_loss(theta):
        out.set_params(theta)
        return float(np.sum((yv - out(Xv)) ** 2))

    start = objective(theta0)[0]
    if not np.isfinite(start):
        raise NonFiniteObjective("symbolic network loss is not finite")
    run_epochs(out, objective, valid_loss, cfg)
    if objective(out.get_params())[0] > start:
        out.set_params(theta0)
    return out


# --- closed form --------------------------------------------------------------

@dataclass
class ClosedForm:
    names: list
    coefficients: np.ndarray
    intercept: float
    target: str = "V̂_t"

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if len(self.names) != self.coefficients.size:
            raise ShapeMismatch("one coefficient per input name is required")

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        return X @ self.coefficients + self.intercept

    def coefficient(self, name: str) -> float:
        if name not in self.names:
            return 0.0
        return float(self.coefficients[self.names.index(name)])

    def render(self, digits: int | None = None) -> str:
        """Text such as ``V̂_t = 0.8297·V_{t-1} + 0.1477·V_w + 0.4756``.

        ``digits=None`` prints full precision (round-trips exactly); otherwise
        that many significant digits.
        """

        def fmt(v):
            return repr(float(v)) if digits is None else f"{float(v):.{digits}g}"

        terms = []
        for name, c in zip(self.names, self.coefficients):
            if c != 0:
                terms.append((c, f"{fmt(abs(c))}·{name}"))
        terms.append((self.intercept, fmt(abs(self.intercept))))
        text = ""
        for i, (v, body) in enumerate(terms):
            neg = v < 0
            if i == 0:
                text = ("-" if neg else "") + body
            else:
                text += (" - " if neg else " + ") + body
        return f"{self.target} = {text}"

    def __str__(self) -> str:
        return self.render(4)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "coefficients": [float(c) for c in self.coefficients],
            "intercept": float(self.intercept),
            "formula": self.render(6),
        }


def collapse(snet: SymbolicNetwork, names=None) -> ClosedForm:
    """Compose the affine edges into one linear formula of the inputs."""
    n0 = snet.shape[0]
    names = list(names) if names is not None else [f"x_{i + 1}" for i in range(n0)]
    if len(names) != n0:
        raise ShapeMismatch(f"{len(names)} names for {n0} inputs")
    W = np.eye(n0)  # current node values as rows of input coefficients
    bias = np.zeros(n0)
    for layer in snet.layers:
        M = np.zeros((layer.n_out, layer.n_in))
        beta = np.zeros(layer.n_out)
        for q, row in enumerate(layer.edges):
            for p, e in enumerate(row):
                if e is None:
                    continue
                if not e.candidate.affine:
                    raise NonAffineEdge(f"edge ({q}, {p}) uses non-affine candidate {e.candidate.name!r}")
                s = e.candidate.slope
                M[p, q] = e.c * s * e.a
                beta[p] += e.c * s * e.b + e.d
        W = M @ W
        bias = M @ bias + beta
    return ClosedForm(names, W[0], float(bias[0]))


def parse_formula(text: str) -> ClosedForm:
    """Inverse of :meth:`ClosedForm.render`."""
    if "=" not in text:
        raise ParseError("formula lacks '='", None)
    target, rhs = (s.strip() for s in text.split("=", 1))
    names, coefs, intercept = [], [], 0.0
    tokens = re.split(r"\s+([+-])\s+", rhs.strip())
    signs = ["+"] + tokens[1::2]
    for sign, body in zip(signs, tokens[0::2]):
        neg = sign == "-"
        if body.startswith("-"):
            neg, body = not neg, body[1:]
        value, _, name = body.partition("·")
        try:
            v = float(value)
        except ValueError as exc:
            raise ParseError(f"bad number {value!r}", None) from exc
        v = -v if neg else v
        if name:
            names.append(name)
            coefs.append(v)
        else:
            intercept += v
    return ClosedForm(names, np.array(coefs), intercept, target)


@dataclass
class MeanReversionReport:
    kappa: float
    lag_slope: float
    residual_mean: float
    vix_mean: float
    implied_level: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def mean_reversion_report(cf: ClosedForm, train, lag_name: str = "V_{t-1}", weekly_name: str = "V_w") -> MeanReversionReport:
    """Read ``V̂_t - V_{t-1}`` as ``kappa (V_w - V_{t-1}) + r_t``.

    ``r_t`` collects the remaining affine terms, ``(beta_1 + kappa - 1)
    V_{t-1}`` plus any other inputs plus the intercept; its mean over the
    training rows is reported together with the mean lagged level and the
    level ``-(intercept + other terms) / (beta_1 + kappa - 1)`` at which the
    residual term vanishes.
    """
    if weekly_name not in cf.names or cf.coefficient(weekly_name) == 0:
        raise MissingFeature(f"closed form has no {weekly_name} term")
    if lag_name not in cf.names:
        raise MissingFeature(f"closed form has no {lag_name} term")
    names = list(train.names)
    for n in cf.names:
        if cf.coefficient(n) != 0 and n not in names:
            raise MissingFeature(f"training data lacks column {n}")
    X = np.asarray(train.X, dtype=float)
    kappa = cf.coefficient(weekly_name)
    slope = cf.coefficient(lag_name) + kappa - 1.0
    lag = X[:, names.index(lag_name)]
    resid = slope * lag + cf.intercept
    others = 0.0
    for n in cf.names:
        if n not in (lag_name, weekly_name) and cf.coefficient(n) != 0:
            contrib = cf.coefficient(n) * X[:, names.index(n)]
            resid = resid + contrib
            others = others + contrib.mean()
    implied = -(cf.intercept + others) / slope if slope != 0 else float("nan")
    return MeanReversionReport(
        kappa=float(kappa),
        lag_slope=float(slope),
        residual_mean=float(np.mean(resid)),
        vix_mean=float(lag.mean()),
        implied_level=float(implied),
    )
