import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanvix.bspline import (
    GridSpec,
    eval_basis,
    eval_basis_derivative,
    greville_abscissae,
    make_basis,
)
from kanvix.exceptions import DegenerateDomain, OrderTooLow


def cox_de_boor(i, k, t, x):
    """Textbook recursive definition on half-open knot intervals."""
    if k == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    out = 0.0
    if t[i + k] != t[i]:
        out += (x - t[i]) / (t[i + k] - t[i]) * cox_de_boor(i, k - 1, t, x)
    if t[i + k + 1] != t[i + 1]:
        out += (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * cox_de_boor(i + 1, k - 1, t, x)
    return out


def test_minimal_grid():
    basis = make_basis(GridSpec(0.0, 1.0, grid_size=1, order=0))
    np.testing.assert_array_equal(basis.knots, [0.0, 1.0])
    assert basis.n_basis == 1


def test_knot_count_cubic():
    spec = GridSpec(0.0, 1.0, grid_size=3, order=3)
    basis = make_basis(spec)
    assert len(basis.knots) == 10 == spec.grid_size + 2 * spec.order + 1
    assert basis.n_basis == 6
    # uniform spacing including the extension
    np.testing.assert_allclose(np.diff(basis.knots), 1.0 / 3.0, rtol=1e-12)
    assert basis.knots[3] == 0.0 and basis.knots[6] == 1.0


def test_degenerate_domain():
    with pytest.raises(DegenerateDomain):
        GridSpec(2.0, 2.0)


def test_order_zero_indicator():
    basis = make_basis(GridSpec(0.0, 2.0, grid_size=2, order=0))
    np.testing.assert_array_equal(basis.knots, [0.0, 1.0, 2.0])
    np.testing.assert_array_equal(eval_basis(basis, 0.5), [1.0, 0.0])


def test_right_endpoint_is_covered():
    for k in range(4):
        basis = make_basis(GridSpec(0.0, 1.0, grid_size=3, order=k))
        assert abs(eval_basis(basis, 1.0).sum() - 1.0) < 1e-12


def test_matches_recursive_oracle_at_half():
    basis = make_basis(GridSpec(0.0, 1.0, grid_size=3, order=3))
    expected = [cox_de_boor(i, 3, basis.knots, 0.5) for i in range(6)]
    np.testing.assert_allclose(eval_basis(basis, 0.5), expected, atol=1e-12)


@pytest.mark.parametrize("grid_size,order", [(1, 1), (3, 2), (3, 3), (5, 3), (7, 4)])
def test_matches_recursive_oracle_random(grid_size, order):
    rng = np.random.default_rng(grid_size * 10 + order)
    basis = make_basis(GridSpec(-2.0, 3.5, grid_size=grid_size, order=order))
    xs = rng.uniform(-2.0, 3.5, 50)
    got = eval_basis(basis, xs)
    want = np.array([[cox_de_boor(i, order, basis.knots, x) for i in range(basis.n_basis)] for x in xs])
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_clamping_outside_domain():
    basis = make_basis(GridSpec(0.0, 1.0))
    np.testing.assert_array_equal(eval_basis(basis, -5.0), eval_basis(basis, 0.0))
    np.testing.assert_array_equal(eval_basis(basis, 7.0), eval_basis(basis, 1.0))


@settings(max_examples=200, deadline=None)
@given(
    lower=st.floats(-100, 100),
    width=st.floats(1e-3, 100),
    grid_size=st.integers(1, 8),
    order=st.integers(0, 4),
    u=st.floats(0, 1),
)
def test_partition_nonnegativity_local_support(lower, width, grid_size, order, u):
    basis = make_basis(GridSpec(lower, lower + width, grid_size, order))
    x = lower + u * width
    values = eval_basis(basis, x)
    assert abs(values.sum() - 1.0) < 1e-12
    assert (values >= 0).all()
    t = basis.knots
    xc = min(max(x, lower), lower + width)
    for i, v in enumerate(values):
        if xc < t[i] or xc > t[i + order + 1]:
            assert v == 0.0


def test_derivative_sums_to_zero_and_matches_fd():
    rng = np.random.default_rng(0)
    basis = make_basis(GridSpec(-1.0, 2.0, grid_size=3, order=3))
    xs = rng.uniform(-1.0 + 1e-3, 2.0 - 1e-3, 100)
    d = eval_basis_derivative(basis, xs)
    np.testing.assert_allclose(d.sum(axis=1), 0.0, atol=1e-10)
    h = 1e-6
    fd = (eval_basis(basis, xs + h) - eval_basis(basis, xs - h)) / (2 * h)
    scale = np.maximum(np.abs(fd), 1.0)
    assert np.max(np.abs(d - fd) / scale) < 1e-5


def test_derivative_order_zero_raises():
    with pytest.raises(OrderTooLow):
        eval_basis_derivative(make_basis(GridSpec(0.0, 1.0, order=0)), 0.3)


def test_derivative_zero_outside_domain():
    basis = make_basis(GridSpec(0.0, 1.0))
    np.testing.assert_array_equal(eval_basis_derivative(basis, [-1.0, 2.0]), 0.0)


def test_greville_reproduces_identity():
    basis = make_basis(GridSpec(10.0, 80.0, grid_size=3, order=3))
    xs = np.linspace(10.0, 80.0, 37)
    np.testing.assert_allclose(eval_basis(basis, xs) @ greville_abscissae(basis), xs, atol=1e-10)
