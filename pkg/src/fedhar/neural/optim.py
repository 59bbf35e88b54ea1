"""SGD with classic momentum and bias-corrected Adam.

Steps are functional: they return new parameter and state objects and never
mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

OPTIMIZERS = ("sgdm", "adam")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgdm"
    lr: float = 0.01
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass(frozen=True)
class SgdmState:
    velocity: np.ndarray
    lr: float
    momentum: float


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int
    lr: float
    beta1: float
    beta2: float
    eps: float


def init_state(cfg: OptimizerConfig, n_params: int):
    if cfg.kind == "sgdm":
        return SgdmState(np.zeros(n_params), cfg.lr, cfg.momentum)
    return AdamState(np.zeros(n_params), np.zeros(n_params), 0, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)


def sgdm_step(state: SgdmState, params, grad):
    """v <- mu v + g ; x <- x - lr v"""
    velocity = state.momentum * state.velocity + grad
    return params - state.lr * velocity, replace(state, velocity=velocity)


def adam_step(state: AdamState, params, grad):
    t = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, step_count=t)


def step(state, params, grad):
    if isinstance(state, SgdmState):
        return sgdm_step(state, params, grad)
    return adam_step(state, params, grad)
