"""Self-supervised DIRA on a Y-shaped network.

A shared trunk (base layers ``1..k``) feeds the original classification head
(layers ``k+1..K``) and an auxiliary head that predicts which quarter turn
was applied to the input.  Adaptation only needs unlabeled target images:
the trunk and auxiliary head are retrained on freshly rotated copies under
the EWC penalty while the classification head stays frozen.
"""
import time
from dataclasses import dataclass

import numpy as np

from .data import rotate_quarter
from .dira import (CFASConfig, CandidateResult, HyperGrid, _finish, run_cells)
from .errors import NumericError, ShapeError, UsageError
from .ewc import (FisherDiagonal, fingerprint, penalized_update, per_sample_stack_grads,
                  score_delta)
from .network import (LayerSpec, Network, TrainLoopState, all_finite, apply_update, as_batch,
                      backward_stack, batch_stream, check_params, copy_params,
                      cross_entropy_grad, forward_stack, init_params, minibatches)
from .rng import derive_seed, stream

N_ROTATIONS = 4


@dataclass
class YModel:
    trunk_layers: list
    trunk_params: list
    main_layers: list
    main_params: list
    aux_layers: list
    aux_params: list
    k: int
    rng_seed: int = 0

    def __post_init__(self):
        check_params(self.trunk_layers, self.trunk_params)
        check_params(self.main_layers, self.main_params)
        check_params(self.aux_layers, self.aux_params)
        width = self.trunk_layers[-1].out_dim
        if self.main_layers[0].in_dim != width or self.aux_layers[0].in_dim != width:
            raise ShapeError("both heads must consume the trunk output")
        if self.aux_layers[-1].out_dim != N_ROTATIONS:
            raise ShapeError("auxiliary head must output 4 rotation logits")
        if self.k != len(self.trunk_layers):
            raise ShapeError(f"split index {self.k} does not match trunk depth {len(self.trunk_layers)}")

    @property
    def depth(self):
        return len(self.trunk_layers) + len(self.main_layers)

    @property
    def n_classes(self):
        return self.main_layers[-1].out_dim

    @property
    def n_params(self):
        return sum(p.size for p in self.trunk_params + self.main_params + self.aux_params)

    def trainable_params(self):
        """Parameters touched by self-supervised adaptation: trunk then aux head."""
        return self.trunk_params + self.aux_params

    def with_trainable(self, params):
        n = len(self.trunk_params)
        return YModel(self.trunk_layers, list(params[:n]), self.main_layers, self.main_params,
                      self.aux_layers, list(params[n:]), self.k, self.rng_seed)

    def main_network(self):
        """The unsplit classifier (trunk + main head) as a plain Network."""
        return Network(self.trunk_layers + self.main_layers, self.trunk_params + self.main_params,
                       self.rng_seed)

    def copy(self):
        return YModel(self.trunk_layers, copy_params(self.trunk_params), self.main_layers,
                      copy_params(self.main_params), self.aux_layers, copy_params(self.aux_params),
                      self.k, self.rng_seed)


def aux_head_layers(width):
    return [LayerSpec(width, width, "relu"), LayerSpec(width, N_ROTATIONS, "identity")]


def build_y_model(base, k, seed=0):
    """Split ``base`` after layer ``k`` and attach a fresh rotation head."""
    if not isinstance(base, Network):
        base = Network.create(list(base), seed)
    depth = len(base.layers)
    if not 1 <= k < depth:
        raise UsageError(f"split index k must satisfy 1 <= k < {depth}, got {k}")
    trunk = list(base.layers[:k])
    width = trunk[-1].out_dim
    aux = aux_head_layers(width)
    return YModel(trunk, copy_params(base.params[:2 * k]), list(base.layers[k:]),
                  copy_params(base.params[2 * k:]), aux, init_params(aux, seed, "aux-init"),
                  k, seed)


@dataclass
class RotationBatch:
    images: np.ndarray
    rot_labels: np.ndarray


@dataclass(frozen=True)
class JointLossConfig:
    beta: float = 1.0

    def __post_init__(self):
        if self.beta < 0:
            raise UsageError("beta must be non-negative")


def _square_images(images):
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1] != images.shape[2]:
        raise ShapeError(f"rotation batches need N x S x S images, got shape {images.shape}")
    return images


def make_rotation_batch(images, seed=0):
    """Rotate each image by a uniformly drawn number of quarter turns."""
    images = _square_images(images)
    q = stream(seed, "rotation").integers(0, N_ROTATIONS, size=len(images))
    rotated = np.stack([rotate_quarter(img, r) for img, r in zip(images, q)]) if len(images) else images
    return RotationBatch(rotated, q.astype(np.int64))


# --- forward / backward through the Y --------------------------------------

def _trunk(y, x):
    return forward_stack(y.trunk_layers, y.trunk_params, x)


def main_logits(y, images):
    h, _ = _trunk(y, as_batch(images))
    return forward_stack(y.main_layers, y.main_params, h)[0]


def aux_logits(y, images):
    h, _ = _trunk(y, as_batch(images))
    return forward_stack(y.aux_layers, y.aux_params, h)[0]


def main_accuracy(y, data):
    return float(np.mean(np.argmax(main_logits(y, data.images), axis=1) == data.labels))


def rotation_accuracy(y, images, seed=0):
    """Aux-head accuracy on a seeded rotation batch built from ``images``."""
    batch = make_rotation_batch(images, seed)
    return float(np.mean(np.argmax(aux_logits(y, batch.images), axis=1) == batch.rot_labels))


def aux_gradients(y, rot_batch):
    """Rotation loss and its gradient w.r.t. trunk + aux parameters."""
    h, tcache = _trunk(y, as_batch(rot_batch.images))
    logits, acache = forward_stack(y.aux_layers, y.aux_params, h)
    loss, delta = cross_entropy_grad(logits, rot_batch.rot_labels)
    g_aux, dh = backward_stack(y.aux_layers, y.aux_params, acache, delta)
    g_trunk, _ = backward_stack(y.trunk_layers, y.trunk_params, tcache, dh)
    return loss, g_trunk + g_aux


def joint_gradients(y, images, labels, rot_batch, beta):
    """``L_main + beta * L_aux`` and its gradient, split as (trunk, main, aux)."""
    h, tcache = _trunk(y, as_batch(images))
    logits, mcache = forward_stack(y.main_layers, y.main_params, h)
    loss_main, delta = cross_entropy_grad(logits, labels)
    g_main, dh = backward_stack(y.main_layers, y.main_params, mcache, delta)
    g_trunk, _ = backward_stack(y.trunk_layers, y.trunk_params, tcache, dh)
    if beta == 0:
        return loss_main, 0.0, g_trunk, g_main, [np.zeros_like(p) for p in y.aux_params]
    loss_aux, g_ss = aux_gradients(y, rot_batch)
    n = len(y.trunk_params)
    g_trunk = [a + beta * b for a, b in zip(g_trunk, g_ss[:n])]
    g_aux = [beta * g for g in g_ss[n:]]
    return loss_main, loss_aux, g_trunk, g_main, g_aux


def pretrain_joint(y, source_train, cfg=None, epochs=30, lr=0.05, seed=0, batch_size=32, log=None):
    """SGD on the joint objective over all parameters; returns a new YModel.

    The rotation batch of each step is built from that step's own images.
    """
    cfg = cfg or JointLossConfig()
    x_img = np.asarray(source_train.images, dtype=np.float64)
    labels = np.asarray(source_train.labels)
    trunk, main, aux = (copy_params(y.trunk_params), copy_params(y.main_params),
                        copy_params(y.aux_params))
    step = 0
    for epoch in range(epochs):
        for b, idx in enumerate(minibatches(len(labels), batch_size, stream(seed, "joint-shuffle", epoch))):
            cur = YModel(y.trunk_layers, trunk, y.main_layers, main, y.aux_layers, aux, y.k, y.rng_seed)
            rot = make_rotation_batch(x_img[idx], derive_seed(seed, "joint-rot", epoch, b))
            _, _, g_t, g_m, g_a = joint_gradients(cur, x_img[idx], labels[idx], rot, cfg.beta)
            try:
                trunk = apply_update(trunk, g_t, lr)
                main = apply_update(main, g_m, lr)
                if cfg.beta != 0:
                    aux = apply_update(aux, g_a, lr)
            except NumericError as exc:
                raise NumericError(f"joint pretraining epoch {epoch}, step {step}: {exc}") from exc
            step += 1
        if log is not None:
            done = YModel(y.trunk_layers, trunk, y.main_layers, main, y.aux_layers, aux, y.k, y.rng_seed)
            log(f"joint epoch {epoch + 1}/{epochs} main acc {main_accuracy(done, source_train):.4f}")
    return YModel(y.trunk_layers, trunk, y.main_layers, main, y.aux_layers, aux, y.k, y.rng_seed)


def compute_y_fisher(y, source_data, n_samples=1000, seed=0, beta=1.0, objective="joint", chunk=32):
    """Diagonal Fisher over trunk + aux parameters.

    ``objective="joint"`` squares the per-sample gradient of
    ``log p_main(y|x) + beta * log p_aux(q|rot(x, q))``; ``"main"`` uses the
    classification term only (aux entries are then zero).
    """
    if objective not in ("joint", "main"):
        raise UsageError(f"unknown Fisher objective {objective!r}")
    n_total = len(source_data)
    if not 1 <= n_samples <= n_total:
        raise UsageError(f"n_samples must be in 1..{n_total}, got {n_samples}")
    rng = stream(seed, "fisher")
    idx = np.sort(rng.choice(n_total, size=n_samples, replace=False))
    imgs = np.asarray(source_data.images, dtype=np.float64)[idx]
    labels = np.asarray(source_data.labels)[idx]
    rot = make_rotation_batch(imgs, derive_seed(seed, "fisher-rot"))
    n_trunk = len(y.trunk_params)
    acc = [np.zeros_like(p) for p in y.trainable_params()]

    for start in range(0, n_samples, chunk):
        sl = slice(start, start + chunk)
        h, tcache = _trunk(y, as_batch(imgs[sl]))
        logits, mcache = forward_stack(y.main_layers, y.main_params, h)
        _, dh = per_sample_stack_grads(y.main_layers, y.main_params, mcache,
                                       score_delta(logits, labels[sl]))
        g_trunk, _ = per_sample_stack_grads(y.trunk_layers, y.trunk_params, tcache, dh)
        g_aux = [np.zeros((len(labels[sl]),) + p.shape) for p in y.aux_params]
        if objective == "joint" and beta != 0:
            hr, rcache = _trunk(y, as_batch(rot.images[sl]))
            alogits, acache = forward_stack(y.aux_layers, y.aux_params, hr)
            g_aux, dhr = per_sample_stack_grads(y.aux_layers, y.aux_params, acache,
                                                beta * score_delta(alogits, rot.rot_labels[sl]))
            g_rt, _ = per_sample_stack_grads(y.trunk_layers, y.trunk_params, rcache, dhr)
            g_trunk = [a + b for a, b in zip(g_trunk, g_rt)]
        for a, g in zip(acc, g_trunk + g_aux):
            a += (g * g).sum(axis=0)
    values = [a / n_samples for a in acc]
    if not all_finite(values):
        raise NumericError("Fisher estimate is not finite")
    assert len(values) == n_trunk + len(y.aux_params)
    return FisherDiagonal(values, n_samples, fingerprint(source_data.images, source_data.labels),
                          f"{objective}:true")


# --- adaptation ---------------------------------------------------------------

def _ss_candidate(job):
    (y, anchor, fisher, images, x0_test, target_test, lam, lr, grid, batch_size, cand_seed,
     eval_seed, keep_params) = job
    state = TrainLoopState(copy_params(y.trainable_params()), lr)
    batches = batch_stream(len(images), batch_size, cand_seed, "ss-batches")
    result = CandidateResult(lam, lr)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for step in range(grid.steps):
                idx = next(batches)
                rot = make_rotation_batch(images[idx], derive_seed(cand_seed, "ss-rot", step))
                _, grads = aux_gradients(y.with_trainable(state.params), rot)
                if not all_finite(grads):
                    raise NumericError("non-finite rotation-loss gradient")
                state = penalized_update(state, grads, anchor, fisher, lam, grid.scheme)
    except NumericError as exc:
        result.failed, result.error = True, f"step {state.step}: {exc}"
        return result
    adapted = y.with_trainable(state.params)
    result.a_t = rotation_accuracy(adapted, images, eval_seed)
    result.a_0 = main_accuracy(adapted, x0_test)
    if target_test is not None:
        result.target_accuracy = main_accuracy(adapted, target_test)
    result.params_fingerprint = fingerprint(*state.params)
    if keep_params:
        result.params = state.params
    return result


def adapt_self_supervised(y, anchor, fisher, s_t_images, x0_test, grid=None, cfas_cfg=None, seed=0,
                          target_test=None, domain="target", workers=None, keep_params=True):
    """Grid-searched rotation-task adaptation from unlabeled target images.

    ``s_t_images`` must be a bare ``N x S x S`` array: anything carrying
    labels is rejected.  Scoring uses CFAS with ``A_T`` = rotation accuracy
    on the retraining images (fixed evaluation rotations) and ``A_0`` =
    classification accuracy on ``x0_test``.  The main head is never updated.
    """
    if hasattr(s_t_images, "labels"):
        raise UsageError("self-supervised adaptation accepts target images only, not a labeled dataset")
    images = _square_images(s_t_images)
    if len(images) == 0:
        raise UsageError("need at least one target image")
    grid = grid or HyperGrid()
    cfas_cfg = cfas_cfg or CFASConfig()
    started = time.perf_counter()
    eval_seed = derive_seed(seed, "ss-eval")
    batch_size = min(grid.batch_size, len(images))
    jobs = [(y, anchor, fisher, images, x0_test, target_test, lam, lr, grid, batch_size,
             derive_seed(seed, "candidate", i, j), eval_seed, keep_params)
            for i, j, lam, lr in grid.cells()]
    candidates = run_cells(_ss_candidate, jobs, workers)
    return _finish(candidates, cfas_cfg, domain, len(images), "dira-ss", started)
