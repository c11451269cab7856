"""Dense ReLU network core operating on flat parameter vectors.

All model state lives in a single 1-D float64 vector so parameters can be
shipped between agents and the server without bookkeeping. The storage layout
is layer-major: for each layer, the weight matrix (out x in, row-major)
followed by the bias vector. Everything here is pure given its inputs; RNGs
are always passed in explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np

from .errors import EmptyInputError, ShapeMismatchError

ACTIVATIONS = ("relu",)
HEADS = ("mse", "softmax_ce")


@dataclass(frozen=True)
class MlpSpec:
    """Architecture description: layer sizes plus activation and output head.

    `head="mse"` means identity outputs scored by mean squared error;
    `head="softmax_ce"` means softmax outputs scored by cross-entropy against
    integer class labels.
    """

    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    head: str = "mse"

    def __post_init__(self) -> None:
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(n < 1 for n in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def param_count(self) -> int:
        """Total number of weights and biases."""
        return sum(
            n_in * n_out + n_out
            for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:])
        )


@dataclass
class Batch:
    """A labeled sample set.

    `targets` is an (m, n_out) float matrix for the MSE head, or an (m,)
    integer label vector for the softmax head.
    """

    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, idx: np.ndarray) -> "Batch":
        return Batch(self.inputs[idx], self.targets[idx])


@lru_cache(maxsize=None)
def _layout(layer_sizes: tuple[int, ...]) -> tuple[tuple[slice, slice, int, int], ...]:
    """Per-layer (weight_slice, bias_slice, n_out, n_in) in storage order."""
    entries = []
    offset = 0
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        w = slice(offset, offset + n_in * n_out)
        b = slice(w.stop, w.stop + n_out)
        offset = b.stop
        entries.append((w, b, n_out, n_in))
    return tuple(entries)


def check_params(spec: MlpSpec, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != spec.param_count:
        raise ShapeMismatchError(
            f"expected parameter vector of length {spec.param_count}, "
            f"got shape {params.shape}"
        )
    return params


def check_batch(spec: MlpSpec, batch: Batch) -> None:
    x, y = batch.inputs, batch.targets
    if x.ndim != 2 or x.shape[1] != spec.n_in:
        raise ShapeMismatchError(f"inputs shape {x.shape} does not match n_in={spec.n_in}")
    if x.shape[0] < 1:
        raise ShapeMismatchError("batch must contain at least one sample")
    if spec.head == "mse":
        if y.ndim != 2 or y.shape != (x.shape[0], spec.n_out):
            raise ShapeMismatchError(
                f"targets shape {y.shape} does not match ({x.shape[0]}, {spec.n_out})"
            )
    else:
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ShapeMismatchError(f"label shape {y.shape} does not match batch size")
        if y.min() < 0 or y.max() >= spec.n_out:
            raise ShapeMismatchError("labels outside the output range")


def unflatten(spec: MlpSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of `params` as per-layer (weights, bias) pairs. No copies."""
    params = check_params(spec, params)
    return [
        (params[w].reshape(n_out, n_in), params[b])
        for w, b, n_out, n_in in _layout(spec.layer_sizes)
    ]


def flatten(spec: MlpSpec, layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    out = np.empty(spec.param_count, dtype=np.float64)
    for (w, b, _, _), (W, bias) in zip(_layout(spec.layer_sizes), layers):
        out[w] = W.ravel()
        out[b] = bias
    return out


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform init in [-1/sqrt(n_in), +1/sqrt(n_in)] per layer, weights and biases."""
    out = np.empty(spec.param_count, dtype=np.float64)
    for w, b, n_out, n_in in _layout(spec.layer_sizes):
        bound = 1.0 / np.sqrt(n_in)
        out[w] = rng.uniform(-bound, bound, n_in * n_out)
        out[b] = rng.uniform(-bound, bound, n_out)
    return out


def _logits(spec: MlpSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    a = inputs
    layers = unflatten(spec, params)
    last = len(layers) - 1
    for l, (W, b) in enumerate(layers):
        z = a @ W.T + b
        a = np.maximum(z, 0.0) if l < last else z
    return a


def _softmax(z: np.ndarray) -> np.ndarray:
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    return p


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(spec: MlpSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Model outputs for a batch of inputs.

    Returns raw outputs for the MSE head and class probabilities (rows sum
    to 1) for the softmax head.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != spec.n_in:
        raise ShapeMismatchError(f"inputs shape {inputs.shape} does not match n_in={spec.n_in}")
    z = _logits(spec, params, inputs)
    return _softmax(z) if spec.head == "softmax_ce" else z


def loss(spec: MlpSpec, params: np.ndarray, batch: Batch) -> float:
    check_batch(spec, batch)
    z = _logits(spec, params, batch.inputs)
    if spec.head == "mse":
        return float(np.mean((z - batch.targets) ** 2))
    logp = _log_softmax(z)
    labels = np.asarray(batch.targets, dtype=np.intp)
    return float(-np.mean(logp[np.arange(len(batch)), labels]))


def grad(spec: MlpSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """Exact loss gradient w.r.t. the flat parameter vector (backprop)."""
    check_batch(spec, batch)
    params = check_params(spec, params)
    layers = unflatten(spec, params)
    last = len(layers) - 1
    m = len(batch)

    # Forward pass, keeping pre-activations and layer inputs.
    acts = [batch.inputs]
    zs = []
    a = batch.inputs
    for l, (W, b) in enumerate(layers):
        z = a @ W.T + b
        zs.append(z)
        if l < last:
            a = np.maximum(z, 0.0)
            acts.append(a)

    if spec.head == "mse":
        delta = 2.0 * (zs[-1] - batch.targets) / (m * spec.n_out)
    else:
        labels = np.asarray(batch.targets, dtype=np.intp)
        delta = _softmax(zs[-1])
        delta[np.arange(m), labels] -= 1.0
        delta /= m

    out = np.empty(spec.param_count, dtype=np.float64)
    layout = _layout(spec.layer_sizes)
    for l in range(last, -1, -1):
        w, b, _, _ = layout[l]
        out[w] = (delta.T @ acts[l]).ravel()
        out[b] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ layers[l][0]) * (zs[l - 1] > 0.0)
    return out


def minibatch_indices(
    n: int, batch_size: int | None, steps: int, rng: np.random.Generator
) -> Iterator[np.ndarray]:
    """Mini-batch index stream for `steps` steps.

    Samples without replacement within an epoch and reshuffles each epoch;
    incomplete tail batches are dropped. A batch_size of None (or >= n) yields
    the full index range every step and leaves the rng untouched.
    """
    if n < 1:
        raise EmptyInputError("empty data source")
    if batch_size is not None and batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size is None or batch_size >= n:
        full = np.arange(n)
        for _ in range(steps):
            yield full
        return
    emitted = 0
    while emitted < steps:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            if emitted == steps:
                return
            yield order[start : start + batch_size]
            emitted += 1


def sgd(
    spec: MlpSpec,
    init: np.ndarray,
    data: Batch,
    steps: int,
    lr: float,
    batch_size: int | None,
    rng: np.random.Generator,
) -> np.ndarray:
    """Plain SGD from `init`, returning the final parameter vector.

    Deterministic given the rng state. `steps=0` returns a copy of `init`.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if len(data) < 1:
        raise EmptyInputError("empty data source")
    params = np.array(check_params(spec, init), copy=True)
    for idx in minibatch_indices(len(data), batch_size, steps, rng):
        params -= lr * grad(spec, params, data.take(idx))
    return params


def hvp(
    spec: MlpSpec,
    params: np.ndarray,
    batch: Batch,
    v: np.ndarray,
    eps: float = 1e-4,
) -> np.ndarray:
    """Hessian-vector product of the loss, by central differences of grad().

    Step size is eps / max(1, ||v||) so the probe displacement stays O(eps).
    """
    v = np.asarray(v, dtype=np.float64)
    params = check_params(spec, params)
    if v.shape != params.shape:
        raise ShapeMismatchError(f"v shape {v.shape} does not match params")
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        return np.zeros_like(params)
    h = eps / max(1.0, nv)
    g_plus = grad(spec, params + h * v, batch)
    g_minus = grad(spec, params - h * v, batch)
    return (g_plus - g_minus) / (2.0 * h)
