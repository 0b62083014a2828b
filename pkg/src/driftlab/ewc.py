"""Elastic weight consolidation: diagonal Fisher, quadratic penalty, update rule.

The update descends ``L_T(theta) + sum_j lam * F_j * (theta_j - anchor_j)**2``,
so the penalty derivative is *added* to the loss gradient before the step.
"""
import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, UsageError
from .network import (TrainLoopState, all_finite, apply_update, as_batch, backward,
                      check_congruent, forward_stack, log_softmax, softmax)
from .rng import stream


def fingerprint(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


@dataclass
class FisherDiagonal:
    values: list
    n_samples: int = 0
    source_fingerprint: str = ""
    label_mode: str = "true"

    def __post_init__(self):
        self.values = [np.asarray(v, dtype=np.float64) for v in self.values]
        for v in self.values:
            if not np.isfinite(v).all():
                raise NumericError("Fisher diagonal has non-finite entries")
            if (v < 0).any():
                raise NumericError("Fisher diagonal has negative entries")


@dataclass(frozen=True)
class AnchorParams:
    values: tuple

    def __init__(self, params):
        frozen = []
        for p in params:
            a = np.array(p, dtype=np.float64, copy=True)
            a.setflags(write=False)
            frozen.append(a)
        object.__setattr__(self, "values", tuple(frozen))

    def __len__(self):
        return len(self.values)


@dataclass
class EwcConfig:
    lam: float = 0.0
    lr: float = 0.01
    steps: int = 100
    batch_size: int = 32
    scheme: str = "implicit"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise UsageError(f"unknown update scheme {self.scheme!r}")
        if self.lam < 0:
            raise UsageError("lambda must be non-negative")
        if self.lr <= 0 or self.steps <= 0 or self.batch_size <= 0:
            raise UsageError("lr, steps and batch_size must be positive")


def _values(obj):
    return list(obj.values) if isinstance(obj, (FisherDiagonal, AnchorParams)) else list(obj)


def per_sample_stack_grads(layers, params, cache, delta):
    """Per-sample parameter gradients of a stack, each with a leading batch axis.

    ``delta`` holds the per-sample gradient w.r.t. the stack output (rows are
    independent samples, *not* averaged).
    """
    inputs, pre = cache
    out = [None] * len(params)
    for idx in range(len(layers) - 1, -1, -1):
        if layers[idx].activation == "relu":
            delta = delta * (pre[idx] > 0.0)
        out[2 * idx] = np.einsum("ni,no->nio", inputs[idx], delta)
        out[2 * idx + 1] = delta
        delta = delta @ params[2 * idx].T
    return out, delta


def score_delta(logits, labels):
    """Per-sample d log p(y|x) / d logits (softmax score)."""
    delta = -softmax(logits)
    delta[np.arange(len(labels)), labels] += 1.0
    return delta


def pick_labels(logits, true_labels, label_mode, rng):
    if label_mode == "true":
        return np.asarray(true_labels, dtype=np.int64)
    if label_mode == "sampled":
        probs = softmax(logits)
        u = rng.random(len(probs))[:, None]
        return np.minimum((np.cumsum(probs, axis=1) < u).sum(axis=1), probs.shape[1] - 1)
    raise UsageError(f"unknown Fisher label mode {label_mode!r} (use 'true' or 'sampled')")


def compute_fisher(net, source_data, n_samples=1000, seed=0, label_mode="true", chunk=64):
    """Empirical diagonal Fisher of the source model.

    ``F_j = mean over sampled (x, y) of (d log p(y|x) / d theta_j)**2`` with
    per-sample (batch size 1) gradients.  Samples are drawn without
    replacement from ``source_data``.
    """
    n_total = len(source_data)
    if not 1 <= n_samples <= n_total:
        raise UsageError(f"n_samples must be in 1..{n_total}, got {n_samples}")
    rng = stream(seed, "fisher")
    idx = np.sort(rng.choice(n_total, size=n_samples, replace=False))
    x = as_batch(source_data.images)[idx]
    y = np.asarray(source_data.labels)[idx]

    acc = [np.zeros_like(p) for p in net.params]
    for start in range(0, n_samples, chunk):
        xb = x[start:start + chunk]
        logits, cache = forward_stack(net.layers, net.params, xb)
        if not np.isfinite(log_softmax(logits)).all():
            raise NumericError("source model produced non-finite log-probabilities")
        yb = pick_labels(logits, y[start:start + chunk], label_mode, rng)
        grads, _ = per_sample_stack_grads(net.layers, net.params, cache, score_delta(logits, yb))
        for a, g in zip(acc, grads):
            a += (g * g).sum(axis=0)
    values = [a / n_samples for a in acc]
    if not all_finite(values):
        raise NumericError("Fisher estimate is not finite")
    return FisherDiagonal(values, n_samples, fingerprint(source_data.images, source_data.labels),
                          label_mode)


def _check_ewc_inputs(params, anchor, fisher):
    anchor, fisher = _values(anchor), _values(fisher)
    check_congruent(params, anchor, "parameters and anchor")
    check_congruent(params, fisher, "parameters and Fisher diagonal")
    return anchor, fisher


def ewc_penalty(params, anchor, fisher, lam):
    """``sum_j lam * F_j * (theta_j - anchor_j)**2``."""
    anchor, fisher = _check_ewc_inputs(params, anchor, fisher)
    total = 0.0
    for p, a, f in zip(params, anchor, fisher):
        d = p - a
        total += float(np.sum(f * d * d))
    return lam * total


def ewc_gradient(params, anchor, fisher, lam):
    anchor, fisher = _check_ewc_inputs(params, anchor, fisher)
    with np.errstate(over="ignore", invalid="ignore"):
        return [2.0 * lam * f * (p - a) for p, a, f in zip(params, anchor, fisher)]


SCHEMES = ("implicit", "explicit")


def penalized_update(state, loss_grads, anchor, fisher, lam, scheme="implicit"):
    """One descent step on ``L_T + penalty`` given the loss gradient at theta_t.

    ``scheme="explicit"`` is the textbook step
    ``theta - lr * (grad L_T + 2 lam F (theta - anchor))``; it is unstable once
    ``2 lr lam F_j > 2``.  ``scheme="implicit"`` (default) evaluates the
    quadratic penalty at the new point, which has the closed form
    ``anchor + (theta - anchor - lr * grad L_T) / (1 + 2 lr lam F)`` and is
    stable for any lambda.  Both agree to first order in ``lr``.

    With ``lam == 0`` the penalty is skipped entirely, so either scheme is
    bit-identical to :func:`driftlab.network.sgd_step`.
    """
    if lam < 0:
        raise UsageError("lambda must be non-negative")
    if scheme not in SCHEMES:
        raise UsageError(f"unknown update scheme {scheme!r}; valid: {', '.join(SCHEMES)}")
    if lam == 0:
        new = apply_update(state.params, loss_grads, state.lr)
        return TrainLoopState(new, state.lr, state.step + 1)
    anchor_v, fisher_v = _check_ewc_inputs(state.params, anchor, fisher)
    if scheme == "explicit":
        pen = ewc_gradient(state.params, anchor_v, fisher_v, lam)
        with np.errstate(over="ignore", invalid="ignore"):
            direction = [g + r for g, r in zip(loss_grads, pen)]
        new = apply_update(state.params, direction, state.lr)
    else:
        check_congruent(state.params, loss_grads, "parameters and gradients")
        if not all_finite(loss_grads):
            raise NumericError("non-finite gradient entry; aborting update")
        lr = state.lr
        with np.errstate(over="ignore", invalid="ignore"):
            new = [a + (p - a - lr * g) / (1.0 + 2.0 * lr * lam * f)
                   for p, g, a, f in zip(state.params, loss_grads, anchor_v, fisher_v)]
        if not all_finite(new):
            raise NumericError("update produced non-finite parameters")
    return TrainLoopState(new, state.lr, state.step + 1)


def regularized_step(state, net, batch, labels, anchor, fisher, lam, scheme="implicit"):
    """Loss gradient on ``batch`` at the state's parameters, then a penalized step."""
    _, grads = backward(net.with_params(state.params), batch, labels)
    return penalized_update(state, grads, anchor, fisher, lam, scheme)


def max_displacement(params, anchor):
    anchor = _values(anchor)
    check_congruent(params, anchor, "parameters and anchor")
    return max(float(np.max(np.abs(p - a))) for p, a in zip(params, anchor))
