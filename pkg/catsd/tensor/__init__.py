"""Minimal reverse-mode differentiation over dense float64 arrays."""

from catsd.tensor.core import GradTape, Tensor, active_tape, as_tensor, backward, custom_op
from catsd.tensor.gradcheck import GradCheckReport, grad_check

__all__ = [
    "GradCheckReport",
    "GradTape",
    "Tensor",
    "active_tape",
    "as_tensor",
    "backward",
    "custom_op",
    "grad_check",
]
