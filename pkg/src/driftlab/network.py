"""Dense feedforward classifier with analytic backprop and plain SGD.

Parameters are kept as a flat list ``[W1, b1, W2, b2, ...]`` of float64
arrays, with ``W`` shaped ``(in_dim, out_dim)`` so that a layer computes
``act(x @ W + b)``.  Gradient sets use exactly the same layout, which lets
the EWC code treat parameters, anchors, Fisher diagonals and gradients
uniformly.
"""
from dataclasses import dataclass

import numpy as np

from .errors import LabelError, NumericError, ShapeError, UsageError
from .rng import stream

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"
    kind: str = "dense"

    def __post_init__(self):
        if self.kind != "dense":
            raise UsageError(f"unsupported layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"unknown activation {self.activation!r}")
        if int(self.in_dim) <= 0 or int(self.out_dim) <= 0:
            raise ShapeError(f"layer dims must be positive, got {self.in_dim}->{self.out_dim}")

    @property
    def n_params(self):
        return self.in_dim * self.out_dim + self.out_dim


def check_stack(layers):
    for a, b in zip(layers, layers[1:]):
        if a.out_dim != b.in_dim:
            raise ShapeError(f"layer output dim {a.out_dim} does not feed next input dim {b.in_dim}")


def dense_stack(dims, final_activation="identity"):
    """Layer specs for widths ``dims[0] -> dims[1] -> ... -> dims[-1]``."""
    if len(dims) < 2:
        raise UsageError("need at least an input and an output width")
    layers = [LayerSpec(int(i), int(o), "relu") for i, o in zip(dims[:-2], dims[1:-1])]
    layers.append(LayerSpec(int(dims[-2]), int(dims[-1]), final_activation))
    return layers


def init_params(layers, seed, purpose="init"):
    """Glorot-uniform weights, zero biases; one RNG stream per layer."""
    params = []
    for idx, spec in enumerate(layers):
        limit = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        rng = stream(seed, purpose, idx)
        params.append(rng.uniform(-limit, limit, size=(spec.in_dim, spec.out_dim)))
        params.append(np.zeros(spec.out_dim))
    return params


@dataclass
class Network:
    layers: list
    params: list
    rng_seed: int = 0

    def __post_init__(self):
        self.layers = list(self.layers)
        if not self.layers:
            raise UsageError("a network needs at least one layer")
        check_stack(self.layers)
        if self.layers[-1].activation != "identity":
            raise UsageError("final layer must use identity activation (softmax lives in the loss)")
        check_params(self.layers, self.params)

    @classmethod
    def create(cls, dims, seed=0):
        layers = dense_stack(dims)
        return cls(layers, init_params(layers, seed), seed)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def n_classes(self):
        return self.layers[-1].out_dim

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def copy(self):
        return Network(self.layers, copy_params(self.params), self.rng_seed)

    def with_params(self, params):
        return Network(self.layers, params, self.rng_seed)


def check_params(layers, params):
    if len(params) != 2 * len(layers):
        raise ShapeError(f"expected {2 * len(layers)} parameter blocks, got {len(params)}")
    for idx, spec in enumerate(layers):
        w, b = params[2 * idx], params[2 * idx + 1]
        if w.shape != (spec.in_dim, spec.out_dim) or b.shape != (spec.out_dim,):
            raise ShapeError(
                f"layer {idx}: expected W {(spec.in_dim, spec.out_dim)} and b {(spec.out_dim,)}, "
                f"got {w.shape} and {b.shape}"
            )


def copy_params(params):
    return [np.array(p, dtype=np.float64, copy=True) for p in params]


def check_congruent(a, b, what="parameter sets"):
    if len(a) != len(b) or any(x.shape != y.shape for x, y in zip(a, b)):
        raise ShapeError(f"{what} are not shape-congruent")


def all_finite(arrays):
    return all(np.isfinite(a).all() for a in arrays)


def as_batch(batch):
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    elif x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    return x


# --- stack primitives (also used by the Y-shaped model) ---------------------

def forward_stack(layers, params, x):
    """Run ``x`` through ``layers``; returns (output, cache for backprop)."""
    if x.shape[1] != layers[0].in_dim:
        raise ShapeError(f"batch width {x.shape[1]} does not match input dim {layers[0].in_dim}")
    inputs, pre = [], []
    a = x
    # overflow is detected by the callers' finiteness checks
    with np.errstate(over="ignore", invalid="ignore"):
        for idx, spec in enumerate(layers):
            inputs.append(a)
            z = a @ params[2 * idx] + params[2 * idx + 1]
            pre.append(z)
            a = np.maximum(z, 0.0) if spec.activation == "relu" else z
    return a, (inputs, pre)


def backward_stack(layers, params, cache, grad_out):
    """Backpropagate ``grad_out`` (gradient w.r.t. the stack output).

    Returns (parameter gradients, gradient w.r.t. the stack input).
    """
    inputs, pre = cache
    grads = [None] * len(params)
    delta = grad_out
    with np.errstate(over="ignore", invalid="ignore"):
        for idx in range(len(layers) - 1, -1, -1):
            if layers[idx].activation == "relu":
                delta = delta * (pre[idx] > 0.0)
            grads[2 * idx] = inputs[idx].T @ delta
            grads[2 * idx + 1] = delta.sum(axis=0)
            delta = delta @ params[2 * idx].T
    return grads, delta


def log_softmax(logits):
    """Row-wise log-softmax with max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def _check_labels(labels, n_rows, n_classes):
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n_rows:
        raise ShapeError(f"expected {n_rows} labels, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes}), got range [{y.min()}, {y.max()}]")
    return y.astype(np.int64)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    logits = as_batch(logits)
    y = _check_labels(labels, logits.shape[0], logits.shape[1])
    logp = log_softmax(logits)
    return float(-logp[np.arange(len(y)), y].mean())


def cross_entropy_grad(logits, labels):
    """Loss and d(loss)/d(logits) for the mean cross-entropy."""
    y = _check_labels(labels, logits.shape[0], logits.shape[1])
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(len(y)), y].mean())
    delta = np.exp(logp)
    delta[np.arange(len(y)), y] -= 1.0
    return loss, delta / len(y)


# --- public operations -------------------------------------------------------

def forward(net, batch):
    """Raw logits for ``batch`` (rows are samples; images are flattened)."""
    out, _ = forward_stack(net.layers, net.params, as_batch(batch))
    if not np.isfinite(out).all():
        raise NumericError("forward pass produced non-finite logits")
    return out


def backward(net, batch, labels):
    """Mean cross-entropy and its exact gradient for every parameter."""
    x = as_batch(batch)
    logits, cache = forward_stack(net.layers, net.params, x)
    loss, delta = cross_entropy_grad(logits, labels)
    grads, _ = backward_stack(net.layers, net.params, cache, delta)
    if not np.isfinite(loss) or not all_finite(grads):
        raise NumericError("backward pass produced non-finite values")
    return loss, grads


@dataclass
class TrainLoopState:
    params: list
    lr: float
    step: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise UsageError("learning rate must be non-negative")


def apply_update(params, direction, lr):
    """``theta - lr * direction`` blockwise, refusing non-finite input."""
    check_congruent(params, direction, "parameters and gradients")
    if not all_finite(direction):
        raise NumericError("non-finite gradient entry; aborting update")
    with np.errstate(over="ignore", invalid="ignore"):
        new = [p - lr * g for p, g in zip(params, direction)]
    if not all_finite(new):
        raise NumericError("update produced non-finite parameters")
    return new


def sgd_step(state, grads):
    return TrainLoopState(apply_update(state.params, grads, state.lr), state.lr, state.step + 1)


def predict(net, images):
    logits = forward(net, images)
    return np.argmax(logits, axis=1)  # argmax returns the lowest index on ties


def accuracy(net, data):
    """Fraction of ``data`` (anything with .images/.labels) classified correctly."""
    labels = np.asarray(data.labels)
    if len(labels) == 0:
        raise UsageError("accuracy of an empty dataset is undefined")
    return float(np.mean(predict(net, data.images) == labels))


def minibatches(n, batch_size, rng):
    """Yield index arrays covering a fresh permutation of ``range(n)``."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def batch_stream(n, batch_size, seed, purpose):
    """Endless mini-batch index stream; epoch ``e`` uses its own shuffle."""
    epoch = 0
    while True:
        yield from minibatches(n, batch_size, stream(seed, purpose, epoch))
        epoch += 1


def train(net, data, epochs=30, lr=0.05, batch_size=32, seed=0, log=None):
    """Plain mini-batch SGD on cross-entropy; returns a new trained network."""
    x = as_batch(data.images)
    y = np.asarray(data.labels)
    state = TrainLoopState(copy_params(net.params), lr)
    for epoch in range(epochs):
        total = 0.0
        for idx in minibatches(len(y), batch_size, stream(seed, "train-shuffle", epoch)):
            try:
                loss, grads = backward(net.with_params(state.params), x[idx], y[idx])
                state = sgd_step(state, grads)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, step {state.step}: {exc}") from exc
            total += loss * len(idx)
        if log is not None:
            log(f"epoch {epoch + 1}/{epochs} loss {total / len(y):.4f}")
    return net.with_params(state.params)
