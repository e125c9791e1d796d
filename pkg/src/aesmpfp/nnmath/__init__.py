"""Minimal dense-tensor math with reverse-mode differentiation."""

from . import functional, tensor
from .checkpoint import load as load_checkpoint
from .checkpoint import save as save_checkpoint
from .functional import (
    bce_with_logits,
    dense,
    gaussian_kl,
    gaussian_log_prob,
    gaussian_sample,
    gru_cell,
    mse,
    relu,
    sigmoid,
    softplus,
    tanh,
)
from .layers import MLP, Dense, GRUCell, Module
from .optim import Adam, AdamState, adam_step, linear_lr
from .tensor import Tensor, concat, no_grad

__all__ = [
    "Adam", "AdamState", "Dense", "GRUCell", "MLP", "Module", "Tensor",
    "adam_step", "bce_with_logits", "concat", "dense", "functional", "gaussian_kl",
    "gaussian_log_prob", "gaussian_sample", "gru_cell", "linear_lr", "load_checkpoint",
    "mse", "no_grad", "relu", "save_checkpoint", "sigmoid", "softplus", "tanh", "tensor",
]
