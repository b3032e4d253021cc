"""Fully connected ReLU regressor with hand-written backpropagation.

Parameters live in one flat ``float64`` buffer laid out layer by layer as
``W1, b1, W2, b2, ...``. Each ``W`` has shape ``(in, out)`` and is stored
row-major, so flat index 0 is ``W1[0, 0]``. The per-layer arrays exposed by
:class:`MlpModel` are views into that buffer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .numerics import RngStream

DEFAULT_HIDDEN = (128, 128)


def layer_dims_for(p: int, hidden=DEFAULT_HIDDEN) -> tuple[int, ...]:
    return (int(p), *[int(h) for h in hidden], 1)


def param_count(layer_dims) -> int:
    return sum(i * o + o for i, o in zip(layer_dims[:-1], layer_dims[1:]))


class Batch(NamedTuple):
    inputs: np.ndarray
    targets: np.ndarray


@dataclass
class MlpModel:
    layer_dims: tuple[int, ...]
    params: np.ndarray
    weights: list[np.ndarray] = field(init=False, repr=False)
    biases: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.layer_dims = tuple(int(x) for x in self.layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError(f"invalid layer dims {self.layer_dims}")
        self.params = np.asarray(self.params, dtype=np.float64)
        d = param_count(self.layer_dims)
        if self.params.shape != (d,):
            raise ValueError(f"parameter vector has shape {self.params.shape}, expected ({d},)")
        self.weights, self.biases = [], []
        offset = 0
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            self.weights.append(self.params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out))
            offset += fan_in * fan_out
            self.biases.append(self.params[offset:offset + fan_out])
            offset += fan_out

    @property
    def dim(self) -> int:
        return self.params.size

    def copy(self) -> "MlpModel":
        return MlpModel(self.layer_dims, self.params.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, MlpModel):
            return NotImplemented
        return self.layer_dims == other.layer_dims and np.array_equal(self.params, other.params)


def init_params(p: int, rng: RngStream, hidden=DEFAULT_HIDDEN) -> MlpModel:
    """Glorot-uniform weights, zero biases.

    Layer weights are drawn in layer order, row-major, each as
    ``(2u - 1) * sqrt(6 / (fan_in + fan_out))``.
    """
    if p < 1:
        raise ValueError("window size p must be >= 1")
    dims = layer_dims_for(p, hidden)
    model = MlpModel(dims, np.zeros(param_count(dims)))
    for w in model.weights:
        fan_in, fan_out = w.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w[...] = ((2.0 * rng.uniform(w.size) - 1.0) * limit).reshape(w.shape)
    return model


def flatten(model: MlpModel) -> np.ndarray:
    return model.params.copy()


def unflatten(layer_dims, v) -> MlpModel:
    return MlpModel(tuple(layer_dims), np.array(v, dtype=np.float64))


def _check_inputs(model: MlpModel, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ValueError(f"inputs have shape {x.shape}, model expects width {model.layer_dims[0]}")
    return x


def forward(model: MlpModel, inputs) -> np.ndarray:
    a = _check_inputs(model, inputs)
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        a = z if i == last else np.maximum(z, 0.0)
    return a[:, 0]


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.shape} != {target.shape}")
    r = pred - target
    return float(np.dot(r, r) / r.size)


def loss_and_grad(model: MlpModel, inputs, targets) -> tuple[float, np.ndarray]:
    """MSE loss and its gradient with respect to the flat parameters.

    The ReLU derivative at exactly zero is taken as zero.
    """
    x = _check_inputs(model, inputs)
    y = np.asarray(targets, dtype=np.float64)
    n = x.shape[0]
    if y.shape != (n,) or n == 0:
        raise ValueError("targets must be a non-empty vector matching the batch")

    acts = [x]
    pre = []
    last = len(model.weights) - 1
    a = x
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)

    resid = acts[-1][:, 0] - y
    loss = float(np.dot(resid, resid) / n)

    grad = np.empty(model.dim)
    gw_views = MlpModel(model.layer_dims, grad)
    delta = (2.0 / n) * resid[:, None]
    for i in range(last, -1, -1):
        gw_views.weights[i][...] = acts[i].T @ delta
        gw_views.biases[i][...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (pre[i - 1] > 0.0)
    return loss, grad


def backward(model: MlpModel, batch: Batch) -> np.ndarray:
    """Gradient of :func:`mse_loss` over ``batch``."""
    return loss_and_grad(model, batch.inputs, batch.targets)[1]


def sgd_step(params, grad, lr: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ValueError(f"dimension mismatch: {params.shape} != {grad.shape}")
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    return params - lr * grad
