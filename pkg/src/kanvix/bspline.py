"""Uniform B-spline bases on a fixed grid.

The knot vector is the interior grid on ``[lower, upper]`` extended by
``order`` equally spaced knots beyond each end, so every point of the domain
is covered by exactly ``order + 1`` nonzero basis functions. Inputs outside
the domain are clamped before evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateDomain, OrderTooLow

__all__ = [
    "GridSpec",
    "BSplineBasis",
    "make_basis",
    "eval_basis",
    "eval_basis_derivative",
    "greville_abscissae",
]


@dataclass(frozen=True)
class GridSpec:
    lower: float
    upper: float
    grid_size: int = 3
    order: int = 3

    def __post_init__(self):
        if int(self.grid_size) != self.grid_size or self.grid_size < 1:
            raise ValueError(f"grid_size must be a positive integer, got {self.grid_size}")
        if int(self.order) != self.order or self.order < 0:
            raise ValueError(f"order must be a nonnegative integer, got {self.order}")
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise DegenerateDomain(f"non-finite domain [{self.lower}, {self.upper}]")
        if not self.lower < self.upper:
            raise DegenerateDomain(f"empty domain [{self.lower}, {self.upper}]")

    @property
    def n_basis(self) -> int:
        return self.grid_size + self.order

    @property
    def n_knots(self) -> int:
        return self.grid_size + 2 * self.order + 1

    @property
    def step(self) -> float:
        return (self.upper - self.lower) / self.grid_size

    def to_dict(self) -> dict:
        return {
            "lower": float(self.lower),
            "upper": float(self.upper),
            "grid_size": int(self.grid_size),
            "order": int(self.order),
        }


@dataclass(frozen=True, eq=False)
class BSplineBasis:
    spec: GridSpec
    knots: np.ndarray = field(repr=False)

    @property
    def n_basis(self) -> int:
        return self.spec.n_basis

    def __call__(self, x):
        return eval_basis(self, x)

    def derivative(self, x):
        return eval_basis_derivative(self, x)


def make_basis(spec: GridSpec) -> BSplineBasis:
    """Build the extended uniform knot vector for ``spec``."""
    if not spec.lower < spec.upper:
        raise DegenerateDomain(f"empty domain [{spec.lower}, {spec.upper}]")
    offsets = np.arange(-spec.order, spec.grid_size + spec.order + 1, dtype=float)
    knots = spec.lower + offsets * spec.step
    # pin the domain ends exactly so clamped inputs land on a knot
    knots[spec.order] = spec.lower
    knots[spec.order + spec.grid_size] = spec.upper
    knots.setflags(write=False)
    return BSplineBasis(spec, knots)


def _locate(basis: BSplineBasis, x: np.ndarray):
    spec = basis.spec
    xc = np.clip(x, spec.lower, spec.upper)
    cell = np.floor((xc - spec.lower) / spec.step).astype(np.intp)
    cell = np.clip(cell, 0, spec.grid_size - 1)
    return xc, cell + spec.order


def _nonzero_basis(knots: np.ndarray, span: np.ndarray, x: np.ndarray, degree: int) -> np.ndarray:
    """Values of the ``degree + 1`` basis functions that are nonzero on each span.

    Column ``m`` holds B_{span - degree + m}. Triangular Cox-de Boor scheme.
    """
    n = x.shape[0]
    values = np.zeros((n, degree + 1))
    values[:, 0] = 1.0
    left = np.zeros((n, degree + 1))
    right = np.zeros((n, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = x - knots[span + 1 - j]
        right[:, j] = knots[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            temp = values[:, r] / (right[:, r + 1] + left[:, j - r])
            values[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        values[:, j] = saved
    return values


def _scatter(local: np.ndarray, span: np.ndarray, degree: int, n_basis: int) -> np.ndarray:
    n = local.shape[0]
    out = np.zeros((n, n_basis))
    rows = np.arange(n)[:, None]
    cols = span[:, None] - degree + np.arange(local.shape[1])[None, :]
    out[rows, cols] = local
    return out


def eval_basis(basis: BSplineBasis, x):
    """Evaluate every basis function at ``x``.

    Returns shape ``(n_basis,)`` for scalar input and ``(len(x), n_basis)``
    for 1-D input.
    """
    xa = np.asarray(x, dtype=float)
    scalar = xa.ndim == 0
    xa = np.atleast_1d(xa)
    xc, span = _locate(basis, xa)
    k = basis.spec.order
    local = _nonzero_basis(basis.knots, span, xc, k)
    out = _scatter(local, span, k, basis.n_basis)
    return out[0] if scalar else out


def eval_basis_derivative(basis: BSplineBasis, x):
    """d/dx of every basis function at ``x`` (zero where ``x`` is clamped)."""
    k = basis.spec.order
    if k < 1:
        raise OrderTooLow("piecewise-constant basis has no derivative")
    xa = np.asarray(x, dtype=float)
    scalar = xa.ndim == 0
    xa = np.atleast_1d(xa)
    xc, span = _locate(basis, xa)
    lower_order = _nonzero_basis(basis.knots, span, xc, k - 1)
    # uniform knots: B'_{i,k} = (B_{i,k-1} - B_{i+1,k-1}) / h
    padded = np.zeros((xa.shape[0], k + 2))
    padded[:, 1:-1] = lower_order
    local = (padded[:, :-1] - padded[:, 1:]) / basis.spec.step
    out = _scatter(local, span, k, basis.n_basis)
    outside = (xa < basis.spec.lower) | (xa > basis.spec.upper)
    out[outside] = 0.0
    return out[0] if scalar else out


def greville_abscissae(basis: BSplineBasis) -> np.ndarray:
    """Coefficients that make the spline reproduce the identity on the domain."""
    k = basis.spec.order
    t = basis.knots
    if k == 0:
        return 0.5 * (t[:-1] + t[1:])
    return np.array([t[i + 1:i + k + 1].mean() for i in range(basis.n_basis)])
