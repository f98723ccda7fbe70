"""Minimal reverse-mode differentiation engine for the autoencoder layers."""
from .functional import add, conv1d, l1_loss, maxpool1d, mul, rnn_forward, tanh_op, tconv1d
from .optim import AdamState, adam_step, truncated_normal_init, xavier_init
from .tensor import Tensor, as_tensor, grad_enabled, no_grad

__all__ = [
    "Tensor",
    "as_tensor",
    "no_grad",
    "grad_enabled",
    "conv1d",
    "tconv1d",
    "maxpool1d",
    "tanh_op",
    "rnn_forward",
    "l1_loss",
    "add",
    "mul",
    "AdamState",
    "adam_step",
    "xavier_init",
    "truncated_normal_init",
]
