"""Minimal reverse-mode autodiff used by every trainable model here."""

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check, init_uniform
from .optim import AdamState, adam_step, clip_grad_norm, zero_grads
from .tensor import Tensor, as_tensor, no_grad, parameter

__all__ = [
    "ops",
    "Tensor",
    "as_tensor",
    "no_grad",
    "parameter",
    "AdamState",
    "adam_step",
    "clip_grad_norm",
    "zero_grads",
    "grad_check",
    "init_uniform",
    "load_checkpoint",
    "save_checkpoint",
]
