"""From-scratch feed-forward network on a flat parameter vector.

ReLU at every layer including the scalar output, squared-error training
gradient, and deterministic mini-batch SGD.  The flat vector layout is
layer-major: weights (out x in, row-major) then biases, per layer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError

DEFAULT_SIZES = (336, 16, 8, 4, 1)
DEFAULT_BATCH = 12
DEFAULT_LR = 0.01


@dataclass(frozen=True)
class LayerSpec:
    sizes: tuple[int, ...] = DEFAULT_SIZES

    def __post_init__(self):
        if len(self.sizes) < 2 or any(w < 1 for w in self.sizes):
            raise DomainError(f"invalid layer sizes {self.sizes}")

    def param_count(self) -> int:
        return sum((i + 1) * o for i, o in zip(self.sizes, self.sizes[1:]))


@dataclass
class ModelParams:
    values: np.ndarray
    spec: LayerSpec

    def copy(self) -> "ModelParams":
        return ModelParams(values=self.values.copy(), spec=self.spec)


def _layer_views(values: np.ndarray, spec: LayerSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of (W, b) per layer into the flat vector; W has shape (out, in)."""
    views = []
    pos = 0
    for fan_in, fan_out in zip(spec.sizes, spec.sizes[1:]):
        w = values[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        b = values[pos : pos + fan_out]
        pos += fan_out
        views.append((w, b))
    return views


def init_params(spec: LayerSpec, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic from the seed."""
    rng = np.random.default_rng(seed)
    values = np.zeros(spec.param_count(), dtype=np.float64)
    for w, b in _layer_views(values, spec):
        fan_out, fan_in = w.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w[:] = rng.uniform(-limit, limit, size=w.shape)
        b[:] = 0.0
    return ModelParams(values=values, spec=spec)


def _check_input(spec: LayerSpec, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != spec.sizes[0]:
        raise DomainError(
            f"input width {X.shape[1]} does not match first layer width {spec.sizes[0]}"
        )
    return X


def forward_batch(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Predictions for a batch of input rows."""
    a = _check_input(params.spec, X)
    for w, b in _layer_views(params.values, params.spec):
        a = np.maximum(a @ w.T + b, 0.0)
    return a[:, 0]


def forward(params: ModelParams, x: np.ndarray) -> float:
    """Scalar prediction for a single input vector."""
    return float(forward_batch(params, np.asarray(x, dtype=np.float64)[None, :])[0])


def batch_gradient(
    params: ModelParams, X: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, float]:
    """Mean squared-error loss over the batch and its exact gradient.

    ReLU subgradient at 0 is taken as 0.
    """
    X = _check_input(params.spec, X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise DomainError("input and target batch sizes differ")
    n = X.shape[0]
    layers = _layer_views(params.values, params.spec)

    activations = [X]
    preacts = []
    a = X
    for w, b in layers:
        z = a @ w.T + b
        a = np.maximum(z, 0.0)
        preacts.append(z)
        activations.append(a)
    pred = activations[-1][:, 0]
    err = pred - y
    loss = float(np.mean(err**2))

    grad = np.zeros_like(params.values)
    grad_views = _layer_views(grad, params.spec)
    # d(mean loss)/d(pred), gated by the output ReLU
    delta = (2.0 * err / n)[:, None] * (preacts[-1] > 0)
    for layer in range(len(layers) - 1, -1, -1):
        w, _ = layers[layer]
        gw, gb = grad_views[layer]
        gw[:] = delta.T @ activations[layer]
        gb[:] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ w) * (preacts[layer - 1] > 0)
    return grad, loss


def backward(params: ModelParams, x: np.ndarray, target: float) -> np.ndarray:
    """Gradient of the per-sample squared error (pred - target)^2."""
    grad, _ = batch_gradient(params, np.asarray(x, dtype=np.float64)[None, :], np.array([target]))
    return grad


def train_local(
    params: ModelParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    epochs: int,
    batch_size: int = DEFAULT_BATCH,
    lr: float = DEFAULT_LR,
    seed: int = 0,
) -> tuple[ModelParams, float]:
    """Mini-batch SGD on a private copy of the parameters.

    Sample order reshuffles deterministically per (seed, epoch); the batch
    gradient is the mean of per-sample gradients; the last partial batch is
    used as-is.  Returns the trained params and the final epoch's mean loss.
    """
    X = _check_input(params.spec, inputs)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    n = X.shape[0]
    if n == 0:
        raise DomainError("train_local needs at least one sample")
    if epochs < 1 or batch_size < 1:
        raise DomainError("epochs and batch_size must be >= 1")
    out = params.copy()
    epoch_loss = 0.0
    for epoch in range(epochs):
        perm = np.random.default_rng([seed, epoch]).permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            batch = perm[start : start + batch_size]
            grad, loss = batch_gradient(out, X[batch], y[batch])
            out.values -= lr * grad
            total += loss * len(batch)
        epoch_loss = total / n
    return out, epoch_loss


def count_ops(spec: LayerSpec) -> int:
    """Multiply-accumulate count for one forward pass."""
    return sum(i * o for i, o in zip(spec.sizes, spec.sizes[1:]))


def mean_loss(params: ModelParams, X: np.ndarray, y: np.ndarray) -> float:
    """Mean squared error of the model over a dataset, without training."""
    pred = forward_batch(params, X)
    return float(np.mean((pred - np.asarray(y, dtype=np.float64)) ** 2))


_MAGIC = b"FLNN"


def save_model(params: ModelParams, path: str | Path, meta: dict | None = None) -> None:
    """Binary dump: layer widths then little-endian float64 values.

    A JSON sidecar at <path>.json records the spec plus caller metadata.
    """
    path = Path(path)
    sizes = params.spec.sizes
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        fh.write(params.values.astype("<f8").tobytes())
    sidecar = {"layer_sizes": list(sizes)}
    sidecar.update(meta or {})
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def load_model(path: str | Path) -> ModelParams:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DomainError(f"{path}: not a model file")
        (n_sizes,) = struct.unpack("<I", fh.read(4))
        sizes = struct.unpack(f"<{n_sizes}I", fh.read(4 * n_sizes))
        spec = LayerSpec(sizes=tuple(sizes))
        values = np.frombuffer(fh.read(8 * spec.param_count()), dtype="<f8").astype(np.float64)
    if values.shape[0] != spec.param_count():
        raise DomainError(f"{path}: truncated parameter vector")
    return ModelParams(values=values, spec=spec)
