"""Local mini-batch training, shared by clients and the centralized baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import get_kernels
from .mlp import MlpArchitecture, _as_batch, check_params
from .optim import OptimizerConfig, init_state, step


@dataclass
class LocalResult:
    params: np.ndarray
    delta: np.ndarray
    loss: float
    state: object
    steps: int


def training_seed(base_seed: int, step_index: int, position: int) -> np.random.SeedSequence:
    """Seed for the ``step_index``-th training job of the worker at ``position``.

    Centralized epochs and single-client federated rounds use the same key,
    which is what makes the two trajectories comparable.
    """
    return np.random.SeedSequence([int(base_seed), int(step_index), int(position)])


def train_local(
    params: np.ndarray,
    arch: MlpArchitecture,
    x,
    y,
    epochs: int,
    batch_size: int,
    optimizer: OptimizerConfig,
    seed,
    state=None,
    backend=None,
) -> LocalResult:
    """Run ``epochs`` shuffled passes over ``(x, y)``.

    The final short batch of each epoch is trained.  ``state=None`` starts a
    fresh optimizer; pass a previous ``LocalResult.state`` to carry it over.
    The returned loss is the sample-weighted mean batch loss of the last epoch.
    """
    check_params(arch, params)
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    x, y = _as_batch(arch, x, y)
    kern = get_kernels(backend)
    sizes = arch.layer_sizes
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    if state is None:
        state = init_state(optimizer, params.size)

    current = np.array(params, dtype=np.float64, copy=True)
    loss, steps = float("nan"), 0
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch_loss, grad = kern.loss_and_grad(current, sizes, x[idx], y[idx], arch.slope)
            current, state = step(state, current, grad)
            total += batch_loss * idx.size
            steps += 1
        loss = total / n
    return LocalResult(current, current - params, loss, state, steps)
