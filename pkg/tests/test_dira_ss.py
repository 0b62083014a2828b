import numpy as np
import pytest

from conftest import central_difference, max_rel_error
from driftlab.data import DomainSpec, GlyphSpec, corrupt, generate_glyphs, rotate_quarter, sample_target_set
from driftlab.dira import HyperGrid
from driftlab.dira_ss import (JointLossConfig, YModel, adapt_self_supervised,
                              aux_gradients, aux_logits, build_y_model, compute_y_fisher,
                              joint_gradients, main_accuracy, main_logits, make_rotation_batch,
                              pretrain_joint, rotation_accuracy)
from driftlab.errors import ShapeError, UsageError
from driftlab.ewc import AnchorParams, fingerprint
from driftlab.network import Network, apply_update, batch_stream, cross_entropy, forward
from driftlab.rng import derive_seed


@pytest.fixture(scope="module")
def glyphs():
    return generate_glyphs(GlyphSpec(seed=0, samples_per_class=100))


@pytest.fixture(scope="module")
def trained_y(glyphs):
    train_set, _ = glyphs
    y = build_y_model([256, 64, 32, 6], k=2, seed=1)
    y = pretrain_joint(y, train_set, JointLossConfig(1.0), epochs=25, lr=0.05, seed=2)
    fisher = compute_y_fisher(y, train_set, 200, seed=3)
    return y, fisher, AnchorParams(y.trainable_params())


def test_split_boundaries():
    y = build_y_model([8, 7, 6, 5, 3], k=3, seed=0)
    assert len(y.main_layers) == 1 and y.depth == 4 and y.k == 3
    for bad in (0, 4):
        with pytest.raises(UsageError):
            build_y_model([8, 7, 6, 5, 3], k=bad)


def test_trunk_plus_main_equals_base(rng):
    base = Network.create([9, 7, 6, 4], seed=5)
    x = rng.random((5, 9))
    for k in (1, 2):
        y = build_y_model(base, k, seed=3)
        assert np.array_equal(main_logits(y, x), forward(base, x))
        assert np.array_equal(forward(y.main_network(), x), forward(base, x))


def test_parameter_count_arithmetic():
    dims = [256, 64, 32, 6]
    base_count = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    for k, width in ((1, 64), (2, 32)):
        y = build_y_model(dims, k, seed=0)
        aux_count = width * width + width + width * 4 + 4
        assert y.n_params == base_count + aux_count
        assert aux_logits(y, np.zeros((2, 16, 16))).shape == (2, 4)


def test_rotation_batch_determinism_and_inverse(rng):
    imgs = rng.random((4, 5, 5))
    a = make_rotation_batch(imgs, seed=11)
    b = make_rotation_batch(imgs, seed=11)
    assert a.rot_labels.tolist() == b.rot_labels.tolist()
    assert a.images.tobytes() == b.images.tobytes()
    for orig, rot, q in zip(imgs, a.images, a.rot_labels):
        assert np.array_equal(rotate_quarter(rot, 4 - q), orig)
        assert np.array_equal(rotate_quarter(orig, q), rot)
    with pytest.raises(ShapeError):
        make_rotation_batch(np.zeros((2, 3, 4)))


def test_rotation_label_frequencies():
    labels = make_rotation_batch(np.zeros((10_000, 2, 2)), seed=0).rot_labels
    freq = np.bincount(labels, minlength=4) / 10_000
    assert ((freq >= 0.23) & (freq <= 0.27)).all()


def test_aux_gradients_match_finite_differences(rng):
    y = build_y_model([9, 6, 5, 3], k=2, seed=4)
    batch = make_rotation_batch(rng.random((5, 3, 3)), seed=1)
    _, grads = aux_gradients(y, batch)

    def loss(ps):
        return cross_entropy(aux_logits(y.with_trainable(ps), batch.images), batch.rot_labels)

    numeric = central_difference(loss, [p.copy() for p in y.trainable_params()])
    assert max_rel_error(grads, numeric) < 1e-4


def test_joint_gradients_match_finite_differences(rng):
    y = build_y_model([9, 6, 5, 3], k=1, seed=4)
    imgs = rng.random((4, 3, 3))
    labels = rng.integers(0, 3, size=4)
    rot = make_rotation_batch(imgs, seed=2)
    beta = 0.7
    _, _, g_t, g_m, g_a = joint_gradients(y, imgs, labels, rot, beta)
    n_t, n_m = len(y.trunk_params), len(y.main_params)

    def loss(ps):
        cur = YModel(y.trunk_layers, ps[:n_t], y.main_layers, ps[n_t:n_t + n_m], y.aux_layers,
                     ps[n_t + n_m:], y.k)
        return (cross_entropy(main_logits(cur, imgs), labels)
                + beta * cross_entropy(aux_logits(cur, rot.images), rot.rot_labels))

    flat = [p.copy() for p in y.trunk_params + y.main_params + y.aux_params]
    assert max_rel_error(g_t + g_m + g_a, central_difference(loss, flat)) < 1e-4


def test_beta_zero_leaves_aux_untouched(glyphs):
    train_set, _ = glyphs
    y = build_y_model([256, 16, 6], k=1, seed=0)
    out = pretrain_joint(y, train_set, JointLossConfig(0.0), epochs=1, lr=0.05, seed=1)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(y.aux_params, out.aux_params))
    assert any(a.tobytes() != b.tobytes() for a, b in zip(y.main_params, out.main_params))


def test_heads_are_output_independent(trained_y, glyphs):
    y, _, _ = trained_y
    fresh_aux = build_y_model([256, 64, 32, 6], k=2, seed=99).aux_params
    swapped = YModel(y.trunk_layers, y.trunk_params, y.main_layers, y.main_params, y.aux_layers,
                     fresh_aux, y.k)
    assert main_accuracy(swapped, glyphs[1]) == main_accuracy(y, glyphs[1])


def test_pretraining_learns_both_tasks(trained_y, glyphs):
    y, _, _ = trained_y
    test_set = glyphs[1]
    # small-data smoke check; the full-size bounds live in the acceptance suite
    assert main_accuracy(y, test_set) >= 0.85
    assert rotation_accuracy(y, test_set.images, seed=0) >= 0.7


def test_y_fisher_covers_trunk_and_aux(trained_y, glyphs):
    y, fisher, _ = trained_y
    assert len(fisher.values) == len(y.trunk_params) + len(y.aux_params)
    assert fisher.values[-1].sum() > 0
    main_only = compute_y_fisher(y, glyphs[0], 50, seed=1, objective="main")
    assert not any(v.any() for v in main_only.values[len(y.trunk_params):])


@pytest.fixture(scope="module")
def target(glyphs):
    tgt = corrupt(glyphs[1], DomainSpec("gaussian_noise", 5), seed=7)
    return tgt, sample_target_set(tgt, 40, seed=8)


GRID = HyperGrid((0.0, 100.0), (1e-2, 5e-2), steps=10, batch_size=16)


def test_adaptation_freezes_main_head(trained_y, glyphs, target):
    y, fisher, anchor = trained_y
    tgt, s_t = target
    report = adapt_self_supervised(y, anchor, fisher, s_t.images, glyphs[1], GRID, seed=1,
                                   target_test=tgt)
    assert report.mode == "dira-ss" and len(report.candidates) == 4
    before = fingerprint(*y.main_params)
    for c in report.candidates:
        adapted = y.with_trainable(c.params)
        assert fingerprint(*adapted.main_params) == before
        assert c.score == c.a_t + 10 * c.a_0
    assert fingerprint(*y.trainable_params()) == fingerprint(*anchor.values)


def test_rejects_labeled_input(trained_y, glyphs, target):
    y, fisher, anchor = trained_y
    with pytest.raises(UsageError, match="images only"):
        adapt_self_supervised(y, anchor, fisher, target[1], glyphs[1], GRID)
    with pytest.raises(UsageError):
        adapt_self_supervised(y, anchor, fisher, np.zeros((0, 16, 16)), glyphs[1], GRID)


def test_lambda_zero_is_unregularized_rotation_training(trained_y, glyphs, target):
    y, fisher, anchor = trained_y
    images = target[1].images
    grid = HyperGrid((0.0,), (0.05,), steps=6, batch_size=16)
    report = adapt_self_supervised(y, anchor, fisher, images, glyphs[1], grid, seed=4)
    # replay: plain SGD on the rotation loss with the same batch and rotation streams
    cand_seed = derive_seed(4, "candidate", 0, 0)
    params = [p.copy() for p in y.trainable_params()]
    batches = batch_stream(len(images), 16, cand_seed, "ss-batches")
    for step in range(6):
        idx = next(batches)
        rot = make_rotation_batch(images[idx], derive_seed(cand_seed, "ss-rot", step))
        _, g = aux_gradients(y.with_trainable(params), rot)
        params = apply_update(params, g, 0.05)
    assert report.best.params_fingerprint == fingerprint(*params)


def test_serial_and_parallel_agree(trained_y, glyphs, target):
    y, fisher, anchor = trained_y
    a = adapt_self_supervised(y, anchor, fisher, target[1].images, glyphs[1], GRID, seed=2, workers=0)
    b = adapt_self_supervised(y, anchor, fisher, target[1].images, glyphs[1], GRID, seed=2, workers=2)
    assert a.to_json() == b.to_json()
