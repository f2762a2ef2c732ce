import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanvix.exceptions import AllPruned, DegenerateSamples, EmptyBatch, MissingFeature, NonAffineEdge
from kanvix.interpret import (
    IDENTITY,
    NEGATION,
    ZERO,
    ClosedForm,
    SymbolicCandidate,
    SymbolicEdge,
    SymbolicLayer,
    SymbolicNetwork,
    collapse,
    finetune_affine,
    fit_symbolic,
    mean_reversion_report,
    parse_formula,
    prune,
    score,
    symbolify,
)
from kanvix.kan_core import build_network, forward
from kanvix.train import TrainConfig, fit

SQUARE = SymbolicCandidate("x^2", lambda u: u * u, lambda u: 2 * u)


def random_snet(shape, seed, candidates=(IDENTITY, NEGATION, ZERO)):
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out in zip(shape[:-1], shape[1:]):
        edges = [[SymbolicEdge(candidates[rng.integers(len(candidates))], *rng.uniform(-2, 2, 4))
                  for _ in range(n_out)] for _ in range(n_in)]
        layers.append(SymbolicLayer(edges))
    return SymbolicNetwork(layers)


class FM:
    def __init__(self, names, X, y=None):
        self.names, self.X, self.y = names, np.asarray(X, float), y


# --- score / prune ------------------------------------------------------------

def test_score_mean_absolute_activation():
    X = np.array([[-1.0], [1.0]])
    net = build_network([1, 1], X)
    layer = net.layers[0]
    layer.params[0, 0, :] = 0.0
    assert score(net, X).edges[0][0, 0] == 0.0
    # spline part only: coefficients 3 everywhere give phi = 3 (partition of unity)
    layer.params[0, 0, 1] = 1.0
    layer.params[0, 0, 2:] = 3.0
    np.testing.assert_allclose(score(net, X).edges[0][0, 0], 3.0, rtol=1e-12)
    layer.params[0, 0, 2:] = [-3.0, -3.0, -3.0, 3.0, 3.0, 3.0]
    # symmetric cubic basis on [-1, 1]: endpoints see only the outer coefficients
    np.testing.assert_allclose(score(net, X).edges[0][0, 0], 3.0, rtol=1e-12)


def test_score_empty_batch():
    net = build_network([2, 1], np.array([[0.0, 0.0], [1.0, 1.0]]))
    with pytest.raises(EmptyBatch):
        score(net, np.zeros((0, 2)))


def test_node_importance_is_min_of_max():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 3))
    net = build_network([3, 2, 1], X, seed=1)
    rep = score(net, X)
    e0, e1 = rep.edges
    np.testing.assert_array_equal(rep.nodes[1], np.minimum(e0.max(axis=0), e1.max(axis=1)))
    np.testing.assert_array_equal(rep.nodes[0], e0.max(axis=1))


def test_prune_threshold_zero_unchanged():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 3))
    net = build_network([3, 2, 1], X, seed=2)
    pruned = prune(net, score(net, X), threshold=0.0)
    np.testing.assert_array_equal(pruned(X), net(X))
    assert pruned.n_active_edges == net.n_active_edges


def test_prune_cascade_removes_orphan_node():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 2))
    net = build_network([2, 2, 1], X, seed=3)
    net.layers[0].active[:, 1] = False
    pruned = prune(net, score(net, X), threshold=0.0)
    assert not pruned.layers[1].active[1, 0]
    assert pruned.layers[1].active[0, 0]


def test_prune_input_layer_bounded_change():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(60, 4))
    net = build_network([4, 1], X, seed=4)
    net.layers[0].params[2, 0, :] *= 1e-3
    rep = score(net, X)
    pruned = prune(net, rep, threshold=0.01)
    removed = ~pruned.layers[0].active & net.layers[0].active
    assert removed[2, 0]
    change = np.abs(pruned(X) - net(X)).mean()
    assert change <= rep.edges[0][removed].sum() + 1e-12


def test_prune_all_raises():
    X = np.array([[0.0], [1.0]])
    net = build_network([1, 2, 1], X)
    net.layers[1].active[:] = False
    with pytest.raises(AllPruned):
        prune(net, score(net, X), threshold=0.0)


def test_prune_does_not_mutate_input():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 3))
    net = build_network([3, 1], X)
    net.layers[0].params[0, 0, :] = 0.0
    before = net.layers[0].active.copy()
    prune(net, score(net, X))
    np.testing.assert_array_equal(net.layers[0].active, before)


def _noise_feature_hits(kind):
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        x1 = rng.uniform(10, 40, 300)
        noise = rng.normal(size=300)
        y = 0.9 * x1 + 2 + rng.normal(scale=0.5, size=300)
        X = np.column_stack([x1, noise])
        net = build_network([2, 1], X[:240], seed=seed)
        fit(net, (X[:240], y[:240]), (X[240:], y[240:]), TrainConfig(max_epochs=40))
        pruned = prune(net, score(net, X[:240], kind=kind))
        hits += not pruned.layers[0].active[1, 0]
    return hits


def test_noise_feature_pruned_std_importance():
    assert _noise_feature_hits("std") >= 9


@pytest.mark.xfail(strict=True, reason="noise edge absorbs part of the intercept; mean |phi| stays near 2% of the signal edge")
def test_noise_feature_pruned_l1_importance():
    assert _noise_feature_hits("l1") >= 9


# --- fit_symbolic -------------------------------------------------------------

def test_fit_exact_affine():
    x = np.linspace(-3, 5, 40)
    e = fit_symbolic(x, 2 * x + 1)
    assert e.candidate is IDENTITY
    assert e.r2 == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(e(x), 2 * x + 1, atol=1e-8)


def test_fit_constant_picks_zero():
    x = np.linspace(0, 1, 10)
    e = fit_symbolic(x, np.full(10, 5.0))
    assert e.candidate is ZERO and e.d == 5.0 and e.c == 0.0 and e.r2 == 1.0
    assert (e.a, e.b) == (1.0, 0.0)


def test_fit_noisy_slope_matches_ols():
    rng = np.random.default_rng(0)
    x = rng.uniform(10, 40, 500)
    y = 0.9 * x + rng.normal(scale=0.01, size=500)
    e = fit_symbolic(x, y)
    slope = np.polyfit(x, y, 1)[0]
    assert e.candidate is IDENTITY
    assert abs(e.c - 0.9) < 0.02
    assert e.c == pytest.approx(slope, rel=1e-10)


def test_fit_degenerate_samples():
    with pytest.raises(DegenerateSamples):
        fit_symbolic(np.full(5, 2.0), np.arange(5.0))


def test_fit_sign_tie_prefers_identity():
    x = np.linspace(-1, 1, 20)
    e = fit_symbolic(x, -3 * x, (ZERO, IDENTITY, NEGATION))
    assert e.candidate is IDENTITY and e.c == pytest.approx(-3.0)
    e = fit_symbolic(x, -3 * x, (ZERO, IDENTITY, NEGATION), positive_scale=True)
    assert e.candidate is NEGATION and e.c == pytest.approx(3.0)


def test_fit_nonaffine_grid_search():
    x = np.linspace(-2, 2, 60)
    y = 1.5 * (x - 0.4) ** 2 + 0.3
    e = fit_symbolic(x, y, (ZERO, IDENTITY, SQUARE))
    assert e.candidate is SQUARE
    assert e.r2 > 0.999


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-50, 50), st.floats(0.1, 20))
def test_fit_reconstructs_lines(slope, icpt, lo, width):
    x = np.linspace(lo, lo + width, 25)
    e = fit_symbolic(x, slope * x + icpt)
    assert e.r2 == pytest.approx(1.0, abs=1e-8)
    scale = max(1.0, abs(slope) * max(abs(lo), abs(lo + width)) + abs(icpt))
    np.testing.assert_allclose(e(x), slope * x + icpt, atol=1e-8 * scale)


# --- symbolify / symbolic network ---------------------------------------------

def _linear_trained(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(10, 40, (300, 2))
    y = 0.7 * X[:, 0] + 0.2 * X[:, 1] + 1 + rng.normal(scale=0.05, size=300)
    net = build_network([2, 1], X[:240], seed=seed)
    fit(net, (X[:240], y[:240]), (X[240:], y[240:]), TrainConfig(max_epochs=40))
    return net, X, y


def test_symbolify_close_to_splines():
    net, X, y = _linear_trained()
    snet = symbolify(net, X[:240])
    assert all(e.candidate is IDENTITY for row in snet.layers[0].edges for e in row)
    rmse = np.sqrt(np.mean((snet(X[:240]) - net(X[:240])) ** 2))
    assert rmse < 0.01 * np.sqrt(np.mean(net(X[:240]) ** 2))


def test_symbolify_constant_input_becomes_offset():
    net, X, _ = _linear_trained()
    Xc = X.copy()
    Xc[:, 1] = Xc[0, 1]
    snet = symbolify(net, Xc)
    e = snet.layers[0].edges[1][0]
    assert e.candidate is ZERO
    _, trace = forward(net, Xc)
    assert e.d == pytest.approx(trace.layers[0].phi[0, 1, 0], abs=1e-12)


def test_symbolify_skips_inactive():
    net, X, _ = _linear_trained()
    net.layers[0].active[1, 0] = False
    snet = symbolify(net, X)
    assert snet.layers[0].edges[1][0] is None


def test_symbolic_gradient_matches_fd():
    rng = np.random.default_rng(5)
    snet = random_snet([3, 2, 1], 5, candidates=(IDENTITY, NEGATION, SQUARE))
    X = rng.normal(size=(15, 3))
    y = rng.normal(size=15)
    theta = snet.get_params()
    _, g = snet.loss_and_gradient(X, y)
    fd = np.empty_like(theta)
    h = 1e-6
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        snet.set_params(tp)
        fp = snet.loss_and_gradient(X, y)[0]
        snet.set_params(tm)
        fm = snet.loss_and_gradient(X, y)[0]
        fd[i] = (fp - fm) / (2 * h)
    snet.set_params(theta)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6 * max(1, np.abs(fd).max()))


# --- finetune -----------------------------------------------------------------

def _exact_linear_snet():
    rng = np.random.default_rng(6)
    X = rng.uniform(-2, 2, (80, 2))
    y = 0.5 * X[:, 0] - 1.5 * X[:, 1] + 2.0
    snet = SymbolicNetwork([SymbolicLayer([[SymbolicEdge(IDENTITY, 1, 0, 0.5, 1.0)],
                                           [SymbolicEdge(IDENTITY, 1, 0, -1.5, 1.0)]])])
    return snet, X, y


def test_finetune_stationary():
    snet, X, y = _exact_linear_snet()
    out = finetune_affine(snet, (X[:60], y[:60]), (X[60:], y[60:]))
    assert np.max(np.abs(out.get_params() - snet.get_params())) < 1e-8


def test_finetune_recovers_perturbed_intercept():
    snet, X, y = _exact_linear_snet()
    snet.layers[0].edges[0][0].d += 1.0
    before = snet.loss_and_gradient(X[:60], y[:60])[0]
    out = finetune_affine(snet, (X[:60], y[:60]), (X[60:], y[60:]))
    after = out.loss_and_gradient(X[:60], y[:60])[0]
    assert after < before
    # input left untouched
    assert snet.layers[0].edges[0][0].d == 2.0


@pytest.mark.parametrize("seed", range(3))
def test_finetune_never_increases_train_loss(seed):
    rng = np.random.default_rng(seed)
    snet = random_snet([2, 2, 1], seed)
    X = rng.normal(size=(50, 2))
    y = X @ [1.0, -1.0] + rng.normal(scale=0.5, size=50)
    before = snet.loss_and_gradient(X[:35], y[:35])[0]
    out = finetune_affine(snet, (X[:35], y[:35]), (X[35:], y[35:]))
    assert out.loss_and_gradient(X[:35], y[:35])[0] <= before


# --- collapse / closed form ---------------------------------------------------

def test_collapse_path_sum():
    e = SymbolicEdge(IDENTITY, 1, 0, 1, 0)
    snet = SymbolicNetwork([SymbolicLayer([[e], [SymbolicEdge(IDENTITY, 1, 0, 1, 0)]]),
                            SymbolicLayer([[SymbolicEdge(IDENTITY, 1, 0, 1, 0)]])])
    cf = collapse(snet, ["x1", "x2"])
    np.testing.assert_array_equal(cf.coefficients, [1.0, 1.0])
    assert cf.intercept == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_collapse_matches_forward(seed):
    snet = random_snet([3, 2, 1], seed)
    X = np.random.default_rng(seed).uniform(-10, 10, (100, 3))
    cf = collapse(snet)
    np.testing.assert_allclose(cf(X), snet(X), rtol=0, atol=1e-10 * max(1, np.abs(snet(X)).max()))


def test_collapse_rejects_nonaffine():
    snet = SymbolicNetwork([SymbolicLayer([[SymbolicEdge(SQUARE, 1, 0, 1, 0)]])])
    with pytest.raises(NonAffineEdge):
        collapse(snet)


def test_render_shape_and_omission():
    cf = ClosedForm(["V_{t-1}", "V_w", "V_m", "V_q"], [0.8297, 0.1477, 0.0, 0.0], 0.4756)
    assert cf.render(4) == "V̂_t = 0.8297·V_{t-1} + 0.1477·V_w + 0.4756"
    cf = ClosedForm(["a", "b"], [-0.5, 2.0], -1.25)
    assert cf.render(3) == "V̂_t = -0.5·a + 2·b - 1.25"


@pytest.mark.parametrize("seed", range(5))
def test_render_roundtrip(seed):
    rng = np.random.default_rng(seed)
    cf = ClosedForm(["V_{t-1}", "V_w", "V_m"], rng.normal(size=3) * 10 ** rng.uniform(-6, 2, 3), rng.normal())
    back = parse_formula(cf.render())
    X = rng.uniform(5, 80, (50, 3))
    np.testing.assert_allclose(back(X), cf(X), rtol=0, atol=1e-12 * np.abs(cf(X)).max())
    assert back.names == cf.names


# --- mean reversion -----------------------------------------------------------

def test_mean_reversion_decomposition():
    cf = ClosedForm(["V_{t-1}", "V_w", "V_m", "V_q"], [0.8290, 0.1472, 0.0, 0.0], 0.4866)
    rng = np.random.default_rng(0)
    lag = rng.normal(size=500)
    lag = 20.34 + (lag - lag.mean())
    fm = FM(["V_{t-1}", "V_w", "V_m", "V_q"], np.column_stack([lag, lag, lag, lag]))
    rep = mean_reversion_report(cf, fm)
    assert rep.kappa == 0.1472
    assert rep.vix_mean == pytest.approx(20.34)
    assert rep.residual_mean == pytest.approx(0.0025, abs=5e-5)


def test_mean_reversion_identity():
    rng = np.random.default_rng(1)
    X = rng.uniform(10, 40, (200, 4))
    cf = ClosedForm(["V_{t-1}", "V_w", "V_m", "V_q"], [0.7, 0.2, 0.05, 0.01], 0.3)
    rep = mean_reversion_report(cf, FM(cf.names, X))
    # V̂ - V_{t-1} = kappa (V_w - V_{t-1}) + r_t, averaged
    lhs = np.mean(cf(X) - X[:, 0])
    rhs = np.mean(rep.kappa * (X[:, 1] - X[:, 0])) + rep.residual_mean
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_mean_reversion_needs_weekly():
    cf = ClosedForm(["V_{t-1}"], [1.0], 0.0)
    with pytest.raises(MissingFeature):
        mean_reversion_report(cf, FM(["V_{t-1}"], np.ones((3, 1))))
