"""Multilayer perceptron with leaky-ReLU hidden layers and a softmax output.

Parameters live in one flat float64 vector so that aggregation code can treat
a model as a point in R^d.  Layout, layer by layer: ``W_l`` as a row-major
``(fan_in, fan_out)`` block, then ``b_l``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import get_kernels

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class MlpArchitecture:
    layer_sizes: tuple[int, ...]
    slope: float = 0.01

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise ValueError("need an input layer, at least one hidden layer and an output layer")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if self.slope < 0:
            raise ValueError("leaky-ReLU slope must be non-negative")

    @classmethod
    def for_task(cls, n_features: int, n_classes: int, hidden=(64, 16), slope=0.01):
        return cls((n_features, *hidden, n_classes), slope)

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def unflatten(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``[(W1, b1), (W2, b2), ...]`` into ``params``."""
        check_params(self, params)
        out, offset = [], 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            out.append((w, params[offset:offset + fan_out]))
            offset += fan_out
        return out


def check_params(arch: MlpArchitecture, params: np.ndarray) -> None:
    if params.ndim != 1 or params.size != arch.n_params:
        raise ValueError(f"expected {arch.n_params} parameters, got shape {params.shape}")


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([np.ravel(w), np.ravel(b)]) for w, b in layers])


def init_params(arch: MlpArchitecture, seed) -> np.ndarray:
    """He-normal weights (variance 2/fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    parts = []
    for fan_in, fan_out in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]):
        parts.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def _as_batch(arch, x, y=None):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != arch.layer_sizes[0]:
        raise ValueError(f"expected features of shape (n, {arch.layer_sizes[0]}), got {x.shape}")
    if x.shape[0] < 1:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input features")
    if y is None:
        return x
    y = np.ascontiguousarray(y, dtype=np.int32)
    if y.shape != (x.shape[0],):
        raise ValueError("labels and features disagree on batch size")
    if y.min() < 0 or y.max() >= arch.n_classes:
        raise ValueError("label out of range")
    return x, y


def forward(params: np.ndarray, arch: MlpArchitecture, x, backend=None) -> np.ndarray:
    """Class-probability matrix, one row per sample."""
    check_params(arch, params)
    x = _as_batch(arch, x)
    return get_kernels(backend).forward_probs(np.ascontiguousarray(params), arch.layer_sizes, x, arch.slope)


def loss_ce(probs: np.ndarray, labels) -> float:
    labels = np.asarray(labels)
    p = probs[np.arange(labels.size), labels]
    return float(-np.log(np.maximum(p, LOG_FLOOR)).mean())


def loss_and_grad(params, arch, x, y, backend=None) -> tuple[float, np.ndarray]:
    check_params(arch, params)
    x, y = _as_batch(arch, x, y)
    return get_kernels(backend).loss_and_grad(np.ascontiguousarray(params), arch.layer_sizes, x, y, arch.slope)


def backward(params, arch, x, y, backend=None) -> np.ndarray:
    """Gradient of the mean cross-entropy at ``params``.

    The log floor only guards the loss value; the gradient is that of the
    unclamped loss, ``(p - onehot) / n`` at the output.
    """
    return loss_and_grad(params, arch, x, y, backend)[1]
