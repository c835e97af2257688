"""Minimal reverse-mode differentiation on numpy arrays."""

from . import ops
from .optim import AdamW, adamw_step, cosine_lr
from .tensor import Tensor, as_tensor, backward, no_grad

__all__ = ["Tensor", "as_tensor", "backward", "no_grad", "ops", "AdamW", "adamw_step", "cosine_lr"]
