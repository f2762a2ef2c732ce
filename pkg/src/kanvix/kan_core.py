"""Kolmogorov-Arnold network with spline-edge activations.

Every edge ``(q, p)`` of a layer carries its own activation

    phi(x) = w_b * silu(x) + w_s * sum_i c_i B_i(x)

and node ``p`` of the next layer is the sum of its incoming edge activations.
All edges leaving input node ``q`` share one B-spline grid, fitted to the
range that node takes on the training batch.

Trainable parameters are stored per layer as an ``(n_in, n_out, 2 + n_basis)``
array holding ``[w_b, w_s, c_0, ..., c_{n_basis-1}]`` for each edge. The
flattened parameter vector is layer-major, then ``(q, p)`` row-major, then
the per-edge slot order above.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .bspline import BSplineBasis, GridSpec, eval_basis, eval_basis_derivative, greville_abscissae, make_basis
from .exceptions import EmptyBatch, ShapeMismatch, ZeroNorm

__all__ = [
    "ActivationEdge",
    "KanLayer",
    "KanNetwork",
    "LayerTrace",
    "ForwardTrace",
    "silu",
    "edge_eval",
    "build_network",
    "forward",
    "edge_norms",
    "layer_l1_norm",
    "layer_entropy",
    "loss_total",
    "gradient",
    "loss_and_gradient",
]


def silu(x):
    return x * expit(x)


def _silu_prime(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


@dataclass
class ActivationEdge:
    w_b: float
    w_s: float
    coeffs: np.ndarray
    basis: BSplineBasis
    active: bool = True

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.basis.n_basis,):
            raise ShapeMismatch(
                f"expected {self.basis.n_basis} coefficients, got {self.coeffs.shape}"
            )

    def __call__(self, x):
        return edge_eval(self, x)


def edge_eval(edge: ActivationEdge, x):
    """Activation of a single edge; inactive edges evaluate to zero."""
    xa = np.asarray(x, dtype=float)
    if not edge.active:
        return np.zeros_like(xa) if xa.ndim else 0.0
    spline = eval_basis(edge.basis, xa) @ edge.coeffs
    out = edge.w_b * silu(xa) + edge.w_s * spline
    return float(out) if xa.ndim == 0 else out


@dataclass
class KanLayer:
    bases: list
    params: np.ndarray
    active: np.ndarray
    # (input array, basis values) for the last batch seen; reused only when the
    # very same array object comes back, so mutate batches by copy, not in place
    _cache: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n_in = len(self.bases)
        if self.params.ndim != 3 or self.params.shape[0] != n_in:
            raise ShapeMismatch("parameter block does not match the number of input grids")
        nb = self.bases[0].n_basis
        if self.params.shape[2] != 2 + nb:
            raise ShapeMismatch(f"expected {2 + nb} slots per edge, got {self.params.shape[2]}")
        if self.active.shape != self.params.shape[:2]:
            raise ShapeMismatch("active mask does not match layer shape")
        self.active = self.active.astype(bool)

    def __deepcopy__(self, memo):
        return KanLayer(list(self.bases), self.params.copy(), self.active.copy())

    def basis_values(self, x: np.ndarray) -> np.ndarray:
        """Basis values ``(N, n_in, n_basis)`` at node inputs ``x``."""
        if self._cache is not None and self._cache[0] is x:
            return self._cache[1]
        return np.stack([eval_basis(self.bases[q], x[:, q]) for q in range(self.n_in)], axis=1)

    def remember(self, x: np.ndarray, B: np.ndarray) -> None:
        self._cache = (x, B)

    @property
    def n_in(self) -> int:
        return self.params.shape[0]

    @property
    def n_out(self) -> int:
        return self.params.shape[1]

    @property
    def w_b(self) -> np.ndarray:
        return self.params[:, :, 0]

    @property
    def w_s(self) -> np.ndarray:
        return self.params[:, :, 1]

    @property
    def coeffs(self) -> np.ndarray:
        return self.params[:, :, 2:]

    def edge(self, q: int, p: int) -> ActivationEdge:
        return ActivationEdge(
            w_b=float(self.params[q, p, 0]),
            w_s=float(self.params[q, p, 1]),
            coeffs=self.params[q, p, 2:].copy(),
            basis=self.bases[q],
            active=bool(self.active[q, p]),
        )


class KanNetwork:
    """Stack of KAN layers ending in a single output node."""

    def __init__(self, layers):
        self.layers = list(layers)
        if not self.layers:
            raise ShapeMismatch("a network needs at least one layer")
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeMismatch(f"layer widths {a.n_out} and {b.n_in} do not chain")
        if self.layers[-1].n_out != 1:
            raise ShapeMismatch("the final layer must have exactly one output")

    @property
    def shape(self) -> list:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def n_params(self) -> int:
        return sum(layer.params.size for layer in self.layers)

    @property
    def n_edges(self) -> int:
        return sum(layer.n_in * layer.n_out for layer in self.layers)

    @property
    def n_active_edges(self) -> int:
        return int(sum(layer.active.sum() for layer in self.layers))

    def n_active_params(self) -> int:
        return int(sum(layer.active.sum() * layer.params.shape[2] for layer in self.layers))

    def get_params(self) -> np.ndarray:
        return np.concatenate([layer.params.ravel() for layer in self.layers])

    def set_params(self, theta) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ShapeMismatch(f"expected {self.n_params} parameters, got {theta.shape}")
        start = 0
        for layer in self.layers:
            stop = start + layer.params.size
            layer.params[...] = theta[start:stop].reshape(layer.params.shape)
            start = stop

    def copy(self) -> "KanNetwork":
        return copy.deepcopy(self)

    def edge(self, l: int, q: int, p: int) -> ActivationEdge:
        return self.layers[l].edge(q, p)

    def __call__(self, X):
        return forward(self, X)[0]

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            grids = [basis.spec.to_dict() for basis in layer.bases]
            edges = []
            for q in range(layer.n_in):
                for p in range(layer.n_out):
                    edges.append({
                        "q": q,
                        "p": p,
                        "w_b": float(layer.params[q, p, 0]),
                        "w_s": float(layer.params[q, p, 1]),
                        "coeffs": [float(c) for c in layer.params[q, p, 2:]],
                        "grid": grids[q],
                        "active": bool(layer.active[q, p]),
                    })
            layers.append({"n_in": layer.n_in, "n_out": layer.n_out, "grids": grids, "edges": edges})
        return {"shape": self.shape, "layers": layers}

    @classmethod
    def from_dict(cls, data: dict) -> "KanNetwork":
        layers = []
        for entry in data["layers"]:
            bases = [make_basis(GridSpec(**g)) for g in entry["grids"]]
            nb = bases[0].n_basis
            params = np.zeros((entry["n_in"], entry["n_out"], 2 + nb))
            active = np.zeros((entry["n_in"], entry["n_out"]), dtype=bool)
            for e in entry["edges"]:
                q, p = e["q"], e["p"]
                params[q, p, 0] = e["w_b"]
                params[q, p, 1] = e["w_s"]
                params[q, p, 2:] = e["coeffs"]
                active[q, p] = e["active"]
            layers.append(KanLayer(bases, params, active))
        return cls(layers)


@dataclass
class LayerTrace:
    x: np.ndarray  # (N, n_in) node inputs
    silu: np.ndarray  # (N, n_in)
    basis: np.ndarray  # (N, n_in, n_basis)
    spline: np.ndarray  # (N, n_in, n_out)
    phi: np.ndarray  # (N, n_in, n_out), zero on inactive edges


@dataclass
class ForwardTrace:
    layers: list = field(default_factory=list)
    output: np.ndarray = None

    @property
    def batch_size(self) -> int:
        return self.output.shape[0]


def _grid_spec(values: np.ndarray, grid_size: int, order: int) -> GridSpec:
    lo, hi = float(np.min(values)), float(np.max(values))
    if not hi > lo:
        # a constant input still needs a nonempty grid
        lo, hi = lo - 0.5, hi + 0.5
    return GridSpec(lo, hi, grid_size, order)


def _layer_forward(layer: KanLayer, x: np.ndarray, cache: bool = False) -> LayerTrace:
    B = layer.basis_values(x)
    if cache:
        layer.remember(x, B)
    s = silu(x)
    spline = np.matmul(B.transpose(1, 0, 2), layer.coeffs.transpose(0, 2, 1)).transpose(1, 0, 2)
    phi = layer.w_b[None] * s[:, :, None] + layer.w_s[None] * spline
    phi = np.where(layer.active[None], phi, 0.0)
    return LayerTrace(x=x, silu=s, basis=B, spline=spline, phi=phi)


def forward(net: KanNetwork, x):
    """Evaluate the network on one input vector or a batch of rows.

    Returns ``(prediction, trace)``; the prediction is a float for a 1-D input
    and an ``(N,)`` array for a 2-D batch.
    """
    xa = np.asarray(x, dtype=float)
    single = xa.ndim == 1
    X = xa[None, :] if single else xa
    if X.ndim != 2 or X.shape[1] != net.shape[0]:
        raise ShapeMismatch(f"network expects {net.shape[0]} inputs, got shape {xa.shape}")
    trace = ForwardTrace()
    h = X
    for l, layer in enumerate(net.layers):
        # input-layer bases depend only on the batch, so repeated calls on the
        # same array (as during training) skip re-evaluating them
        lt = _layer_forward(layer, h, cache=(l == 0))
        trace.layers.append(lt)
        h = lt.phi.sum(axis=1)
    trace.output = h[:, 0]
    return (float(trace.output[0]) if single else trace.output.copy()), trace


def build_network(shape, X, grid_size: int = 3, order: int = 3, seed: int = 0, init: str = "random") -> KanNetwork:
    """Initialise a network and fit its grids to the training inputs ``X``.

    ``init="random"`` draws spline coefficients from N(0, 0.1^2 / n_basis) with
    ``w_b = w_s = 1``. ``init="identity"`` makes the first edge of every node
    reproduce its input on the grid and zeroes all other edges, so the network
    starts as a pass-through of input 0.
    Hidden-layer grids come from one forward pass with the initial parameters
    and stay fixed afterwards.
    """
    shape = [int(s) for s in shape]
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != shape[0]:
        raise ShapeMismatch(f"shape[0]={shape[0]} but X has shape {X.shape}")
    if X.shape[0] == 0:
        raise EmptyBatch("cannot fit grids on an empty batch")
    if shape[-1] != 1:
        raise ShapeMismatch("the final layer must have exactly one output")
    rng = np.random.default_rng(seed)
    nb = grid_size + order
    layers = []
    h = X
    for n_in, n_out in zip(shape[:-1], shape[1:]):
        bases = [make_basis(_grid_spec(h[:, q], grid_size, order)) for q in range(n_in)]
        params = np.zeros((n_in, n_out, 2 + nb))
        if init == "random":
            params[:, :, 0] = 1.0
            params[:, :, 1] = 1.0
            params[:, :, 2:] = rng.normal(0.0, 0.1 / np.sqrt(nb), size=(n_in, n_out, nb))
        elif init == "identity":
            params[:, :, 1] = 1.0
            for p in range(n_out):
                params[0, p, 2:] = greville_abscissae(bases[0])
        else:
            raise ValueError(f"unknown init {init!r}")
        layer = KanLayer(bases, params, np.ones((n_in, n_out), dtype=bool))
        layers.append(layer)
        h = _layer_forward(layer, h).phi.sum(axis=1)
    return KanNetwork(layers)


def edge_norms(layer: KanLayer, lt: LayerTrace) -> np.ndarray:
    """Mean absolute activation of every edge over the batch, ``(n_in, n_out)``."""
    if lt.phi.shape[0] == 0:
        raise EmptyBatch("edge norms need at least one sample")
    return np.where(layer.active, np.abs(lt.phi).mean(axis=0), 0.0)


def layer_l1_norm(layer: KanLayer, lt: LayerTrace) -> float:
    return float(edge_norms(layer, lt).sum())


def _entropy_from_norms(norms: np.ndarray) -> float:
    total = norms.sum()
    if total <= 0:
        raise ZeroNorm("all edge norms are zero")
    p = norms[norms > 0] / total
    return float(-(p * np.log(p)).sum())


def layer_entropy(layer: KanLayer, lt: LayerTrace) -> float:
    return _entropy_from_norms(edge_norms(layer, lt))


def _check_batch(net, X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyBatch("loss needs a nonempty 2-D batch")
    if X.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"{X.shape[0]} rows but {y.shape[0]} targets")
    return X, y


def _regularizer(net, trace, mu1, mu2):
    total = 0.0
    for layer, lt in zip(net.layers, trace.layers):
        norms = edge_norms(layer, lt)
        total += mu1 * norms.sum()
        if mu2 and norms.sum() > 0:
            total += mu2 * _entropy_from_norms(norms)
    return total


def loss_total(net: KanNetwork, X, y, lam: float = 0.0, mu1: float = 1.0, mu2: float = 1.0) -> float:
    """Sum of squared errors plus ``lam * (mu1 * L1 + mu2 * entropy)`` over layers."""
    X, y = _check_batch(net, X, y)
    pred, trace = forward(net, X)
    loss = float(np.sum((y - pred) ** 2))
    if lam:
        loss += lam * _regularizer(net, trace, mu1, mu2)
    return loss


def loss_and_gradient(net: KanNetwork, X, y, lam: float = 0.0, mu1: float = 1.0, mu2: float = 1.0):
    """Loss and its gradient with respect to the flattened parameter vector.

    The L1 terms use the subgradient sign(phi) with sign(0) = 0; an edge whose
    norm is exactly zero contributes no entropy gradient.
    """
    X, y = _check_batch(net, X, y)
    pred, trace = forward(net, X)
    resid = pred - y
    loss = float(np.sum(resid ** 2))
    N = X.shape[0]
    if lam:
        loss += lam * _regularizer(net, trace, mu1, mu2)

    grads = [None] * len(net.layers)
    g_out = (2.0 * resid)[:, None]
    for l in range(len(net.layers) - 1, -1, -1):
        layer, lt = net.layers[l], trace.layers[l]
        g_phi = np.broadcast_to(g_out[:, None, :], lt.phi.shape).copy()
        if lam:
            norms = edge_norms(layer, lt)
            weight = np.full(norms.shape, mu1)
            total = norms.sum()
            if mu2 and total > 0:
                S = _entropy_from_norms(norms)
                safe = np.where(norms > 0, norms, 1.0)
                dS = np.where(norms > 0, (-np.log(safe / total) - S) / total, 0.0)
                weight = weight + mu2 * dS
            g_phi += lam * weight[None] * np.sign(lt.phi) / N
        g_phi *= layer.active[None]

        g = np.empty_like(layer.params)
        g[:, :, 0] = np.einsum("nqp,nq->qp", g_phi, lt.silu)
        g[:, :, 1] = np.einsum("nqp,nqp->qp", g_phi, lt.spline)
        g[:, :, 2:] = layer.w_s[:, :, None] * np.matmul(g_phi.transpose(1, 2, 0), lt.basis.transpose(1, 0, 2))
        grads[l] = g

        if l > 0:
            dB = np.stack(
                [eval_basis_derivative(layer.bases[q], lt.x[:, q]) for q in range(layer.n_in)], axis=1
            )
            dspline = np.matmul(dB.transpose(1, 0, 2), layer.coeffs.transpose(0, 2, 1)).transpose(1, 0, 2)
            dphi_dx = layer.w_b[None] * _silu_prime(lt.x)[:, :, None] + layer.w_s[None] * dspline
            g_out = np.einsum("nqp,nqp->nq", g_phi, dphi_dx)
    return loss, np.concatenate([g.ravel() for g in grads])


def gradient(net: KanNetwork, X, y, lam: float = 0.0, mu1: float = 1.0, mu2: float = 1.0) -> np.ndarray:
    return loss_and_gradient(net, X, y, lam, mu1, mu2)[1]
