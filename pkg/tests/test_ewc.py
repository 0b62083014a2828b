import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import central_difference, max_rel_error
from driftlab.data import Dataset, GlyphSpec, generate_glyphs
from driftlab.errors import NumericError, ShapeError, UsageError
from driftlab.ewc import (AnchorParams, FisherDiagonal, compute_fisher, ewc_gradient, ewc_penalty,
                          max_displacement, penalized_update, regularized_step)
from driftlab.network import (LayerSpec, Network, TrainLoopState, backward, minibatches, sgd_step,
                              train)


@pytest.fixture(scope="module")
def glyph_model():
    train_set, _ = generate_glyphs(GlyphSpec(seed=0))
    net = train(Network.create([256, 64, 32, 6], seed=1), train_set, epochs=15, lr=0.05, seed=2)
    return net, train_set


def test_logistic_closed_form():
    # logits (0, theta * x): p(y=1) = sigmoid(theta x); d log p / d theta = (1 - sigmoid(0)) x = 0.5
    net = Network([LayerSpec(1, 2, "identity")], [np.zeros((1, 2)), np.zeros(2)])
    data = Dataset(np.ones((1, 1, 1)), [1], "source_train", 2)
    fisher = compute_fisher(net, data, n_samples=1)
    assert fisher.values[0][0, 1] == pytest.approx(0.25, abs=1e-15)
    assert fisher.values[1][1] == pytest.approx(0.25, abs=1e-15)


def test_dead_parameters_have_zero_fisher():
    net = Network.create([4, 3, 2], seed=0)
    params = [p.copy() for p in net.params]
    params[2][:] = 0.0
    net = net.with_params(params)
    data = Dataset(np.zeros((5, 2, 2)), [0, 1, 0, 1, 1], "source_train", 2)
    fisher = compute_fisher(net, data, n_samples=5)
    # zero input kills W1; zero last-layer weights kill every hidden-layer gradient
    assert not fisher.values[0].any()
    assert not fisher.values[1].any()
    assert fisher.values[3].sum() > 0  # output bias still sees the score


def test_fisher_matches_per_sample_backward(rng):
    data = Dataset(rng.random((7, 2, 2)), rng.integers(0, 3, size=7), "source_train", 3)
    net = Network.create([4, 5, 3], seed=4)
    fisher = compute_fisher(net, data, n_samples=7)
    # independent oracle: batch-size-1 backward of the loss (-log p), squared and averaged
    expect = [np.zeros_like(p) for p in net.params]
    for i in range(7):
        _, g = backward(net, data.images[i:i + 1], data.labels[i:i + 1])
        for e, gi in zip(expect, g):
            e += gi * gi / 7
    for f, e in zip(fisher.values, expect):
        np.testing.assert_allclose(f, e, rtol=1e-12, atol=1e-18)


def test_fisher_is_deterministic_and_fingerprinted(glyph_model):
    net, data = glyph_model
    a = compute_fisher(net, data, 200, seed=5)
    b = compute_fisher(net, data, 200, seed=5)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.values, b.values))
    assert a.n_samples == 200 and a.label_mode == "true" and len(a.source_fingerprint) == 16
    sampled = compute_fisher(net, data, 200, seed=5, label_mode="sampled")
    assert sampled.label_mode == "sampled"
    assert all((v >= 0).all() for v in sampled.values)


def test_full_population_estimate_is_seed_free(glyph_model):
    net, data = glyph_model
    a = compute_fisher(net, data, len(data), seed=1)
    b = compute_fisher(net, data, len(data), seed=2)
    for x, y in zip(a.values, b.values):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-300)


def _block_error(est, ref):
    return max(abs(e.sum() / r.sum() - 1.0) for e, r in zip(est.values, ref.values))


def test_estimate_converges_to_population(glyph_model):
    net, data = glyph_model
    full = compute_fisher(net, data, len(data))
    small = np.mean([_block_error(compute_fisher(net, data, 150, seed=s), full) for s in range(6)])
    large = np.mean([_block_error(compute_fisher(net, data, 600, seed=s), full) for s in range(6)])
    assert large < small


@pytest.mark.xfail(strict=False, reason="empirical Fisher of a confident model is dominated by a "
                   "handful of hard samples; doubling n moves block sums by ~20% (see ledger)")
def test_doubling_samples_changes_each_entry_under_ten_percent(glyph_model):
    net, data = glyph_model
    a = compute_fisher(net, data, 500, seed=3)
    b = compute_fisher(net, data, 1000, seed=3)
    worst = _block_error(a, b)
    print(f"worst per-block change on doubling n: {worst:.3f}")
    assert worst < 0.10


def test_fisher_rejects_bad_inputs(glyph_model):
    net, data = glyph_model
    with pytest.raises(UsageError):
        compute_fisher(net, data, len(data) + 1)
    with pytest.raises(UsageError):
        compute_fisher(net, data, 10, label_mode="empirical")
    with pytest.raises(NumericError):
        FisherDiagonal([np.array([-1.0])])
    with pytest.raises(NumericError):
        FisherDiagonal([np.array([np.inf])])


# --- penalty and gradient ---------------------------------------------------

def test_penalty_examples():
    theta = [np.array([1.5])]
    anchor = AnchorParams([np.array([1.0])])
    f = [np.array([2.0])]
    assert ewc_penalty(theta, anchor, f, 1.0) == 0.5
    assert ewc_penalty(anchor.values, anchor, f, 7.0) == 0.0
    assert ewc_gradient(theta, anchor, f, 1.0)[0][0] == 2.0
    assert not ewc_gradient(list(anchor.values), anchor, f, 3.0)[0].any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3))
def test_penalty_is_linear_in_lambda(seed, lam):
    rng = np.random.default_rng(seed)
    theta = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    anchor = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    f = [rng.random((3, 2)), rng.random(2)]
    one = ewc_penalty(theta, anchor, f, lam)
    assert ewc_penalty(theta, anchor, f, 2 * lam) == 2 * one  # doubling is exact in binary
    assert one >= 0


def test_gradient_matches_finite_differences(rng):
    theta = [rng.normal(size=(4, 3)), rng.normal(size=3)]
    anchor = [rng.normal(size=(4, 3)), rng.normal(size=3)]
    f = [rng.random((4, 3)), rng.random(3)]
    lam = 3.7
    analytic = ewc_gradient(theta, anchor, f, lam)
    numeric = central_difference(lambda ps: ewc_penalty(ps, anchor, f, lam), [p.copy() for p in theta])
    assert max_rel_error(analytic, numeric) < 1e-8


def test_penalty_shape_mismatch():
    with pytest.raises(ShapeError):
        ewc_penalty([np.zeros(3)], [np.zeros(2)], [np.zeros(3)], 1.0)


def test_anchor_is_read_only_copy():
    src = [np.ones(3)]
    anchor = AnchorParams(src)
    src[0][0] = 5.0
    assert anchor.values[0][0] == 1.0
    with pytest.raises(ValueError):
        anchor.values[0][0] = 2.0


# --- update rule ------------------------------------------------------------

def _batches(net, data, lr, lam, fisher, anchor, steps, seed, scheme="implicit"):
    rng = np.random.default_rng(seed)
    state = TrainLoopState([p.copy() for p in net.params], lr)
    order = [b for _ in range(steps) for b in minibatches(len(data), 16, rng)][:steps]
    for idx in order:
        state = regularized_step(state, net, data.images[idx], data.labels[idx], anchor, fisher, lam,
                                 scheme)
    return state


@pytest.mark.parametrize("scheme", ["implicit", "explicit"])
def test_lambda_zero_is_bit_identical_to_sgd(glyph_model, scheme):
    net, data = glyph_model
    anchor = AnchorParams(net.params)
    fisher = compute_fisher(net, data, 100)
    rng = np.random.default_rng(8)
    a = TrainLoopState([p.copy() for p in net.params], 0.05)
    b = TrainLoopState([p.copy() for p in net.params], 0.05)
    for _ in range(10):
        idx = rng.choice(len(data), 16, replace=False)
        a = regularized_step(a, net, data.images[idx], data.labels[idx], anchor, fisher, 0.0, scheme)
        _, g = backward(net.with_params(b.params), data.images[idx], data.labels[idx])
        b = sgd_step(b, g)
    assert a.step == b.step == 10
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.params, b.params))


def test_huge_lambda_pins_parameters(glyph_model):
    net, data = glyph_model
    anchor = AnchorParams(net.params)
    ones = [np.ones_like(p) for p in net.params]
    shifted = Dataset(np.clip(data.images + 0.4, 0, 1), data.labels, "target", data.n_classes)
    free = _batches(net, shifted, 0.05, 0.0, ones, anchor, 50, seed=3)
    pinned = _batches(net, shifted, 0.05, 1e9, ones, anchor, 50, seed=3)
    assert max_displacement(pinned.params, anchor) < max_displacement(free.params, anchor)
    assert max_displacement(pinned.params, anchor) < 1e-6


@pytest.mark.parametrize("lam,f", [(1.0, 2.0), (10.0, 0.3), (0.5, 0.0)])
def test_zero_loss_contracts_geometrically(lam, f):
    lr = 0.1
    anchor = AnchorParams([np.array([0.25, -1.0])])
    fisher = [np.array([f, f])]
    start = np.array([1.25, 1.0])
    zero = [np.zeros(2)]
    exp_state = TrainLoopState([start.copy()], lr)
    imp_state = TrainLoopState([start.copy()], lr)
    for t in range(1, 6):
        exp_state = penalized_update(exp_state, zero, anchor, fisher, lam, "explicit")
        imp_state = penalized_update(imp_state, zero, anchor, fisher, lam, "implicit")
        d0 = start - anchor.values[0]
        np.testing.assert_allclose(exp_state.params[0] - anchor.values[0],
                                   d0 * (1 - 2 * lr * lam * f) ** t, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(imp_state.params[0] - anchor.values[0],
                                   d0 / (1 + 2 * lr * lam * f) ** t, rtol=1e-12, atol=1e-15)


def test_implicit_is_stable_where_explicit_diverges():
    anchor = AnchorParams([np.zeros(1)])
    fisher = [np.ones(1)]
    zero = [np.zeros(1)]
    imp = TrainLoopState([np.ones(1)], 0.1)
    exp = TrainLoopState([np.ones(1)], 0.1)
    for _ in range(20):
        imp = penalized_update(imp, zero, anchor, fisher, 100.0)
    assert abs(imp.params[0][0]) == pytest.approx(21.0 ** -20, rel=1e-12)
    with pytest.raises(NumericError):
        for _ in range(400):
            exp = penalized_update(exp, zero, anchor, fisher, 100.0, "explicit")


def test_schemes_agree_to_first_order(rng):
    params = [rng.normal(size=4)]
    anchor = AnchorParams([rng.normal(size=4)])
    fisher = [rng.random(4)]
    grads = [rng.normal(size=4)]
    gaps = []
    for lr in (1e-2, 1e-3):
        st_ = TrainLoopState(params, lr)
        a = penalized_update(st_, grads, anchor, fisher, 5.0, "implicit").params[0]
        b = penalized_update(st_, grads, anchor, fisher, 5.0, "explicit").params[0]
        gaps.append(np.abs(a - b).max())
    assert gaps[1] < gaps[0] / 50  # second-order gap shrinks ~100x


def test_update_rejects_bad_arguments():
    state = TrainLoopState([np.zeros(2)], 0.1)
    with pytest.raises(UsageError):
        penalized_update(state, [np.zeros(2)], [np.zeros(2)], [np.zeros(2)], -1.0)
    with pytest.raises(UsageError):
        penalized_update(state, [np.zeros(2)], [np.zeros(2)], [np.zeros(2)], 1.0, "adam")
    with pytest.raises(NumericError):
        penalized_update(state, [np.array([np.nan, 0])], [np.zeros(2)], [np.ones(2)], 1.0)
