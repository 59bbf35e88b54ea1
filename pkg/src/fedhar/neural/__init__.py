"""MLP classifier, backpropagation and optimizers."""

from ._backend import BACKEND, BACKENDS, get_kernels
from .mlp import MlpArchitecture, backward, forward, init_params, loss_and_grad, loss_ce
from .optim import (
    AdamState,
    OptimizerConfig,
    SgdmState,
    adam_step,
    init_state,
    sgdm_step,
)
from .train import LocalResult, train_local, training_seed

__all__ = [
    "BACKEND",
    "BACKENDS",
    "AdamState",
    "LocalResult",
    "MlpArchitecture",
    "OptimizerConfig",
    "SgdmState",
    "adam_step",
    "backward",
    "forward",
    "get_kernels",
    "init_params",
    "init_state",
    "loss_and_grad",
    "loss_ce",
    "sgdm_step",
    "train_local",
    "training_seed",
]
