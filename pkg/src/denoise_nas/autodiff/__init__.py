"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from . import ops
from .optim import Adam
from .tensor import (
    ComputationTape,
    Tensor,
    backward,
    default_dtype,
    get_default_dtype,
    grad_enabled,
    no_grad,
    set_default_dtype,
)

__all__ = [
    "Adam",
    "ComputationTape",
    "Tensor",
    "backward",
    "default_dtype",
    "get_default_dtype",
    "grad_enabled",
    "no_grad",
    "ops",
    "set_default_dtype",
]
