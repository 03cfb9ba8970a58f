"""Minimal reverse-mode automatic differentiation over float64 arrays."""
from . import ops
from .check import gradient_check
from .ops import ShapeError, record
from .optim import Adam, FrozenParameterError, step_lr
from .tensor import Tape, Tensor, as_tensor, backward, current_tape, no_grad, reset_tape

__all__ = [
    "Adam",
    "FrozenParameterError",
    "ShapeError",
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "current_tape",
    "gradient_check",
    "no_grad",
    "ops",
    "record",
    "reset_tape",
    "step_lr",
]
