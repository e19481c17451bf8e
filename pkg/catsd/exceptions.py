from __future__ import annotations

from typing import Optional


class ExceptionBase(Exception):
    """Base exception."""

    message: str

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message


class ShapeError(ExceptionBase, ValueError):
    """Thrown when tensor extents do not satisfy an operation's contract."""


class DomainError(ExceptionBase, ValueError):
    """Thrown when a value lies outside an operation's domain (log of 0, T <= 0, ...)."""


class NonFiniteError(ExceptionBase, ArithmeticError):
    """Thrown when an operation on finite inputs produced NaN or infinity."""


class GradientError(ExceptionBase):
    """Thrown when a backward pass cannot be completed."""


class ModelError(ExceptionBase, ValueError):
    """Thrown when model weights violate their structural invariants."""


class InvalidWeightsFile(ExceptionBase):
    """Thrown during decoding when a weights file cannot be unpacked."""

    frame: bytes

    def __init__(self, message: str, frame: bytes) -> None:
        super().__init__(message=message)
        self.frame = frame


class TaxonomyError(ExceptionBase, ValueError):
    """Exception to indicate class ids that do not fit the class taxonomy."""


class ConfigError(ExceptionBase):
    """Exception to indicate a malformed or invalid run configuration."""

    def __init__(
        self, message: str, line: Optional[int] = None, column: Optional[int] = None
    ) -> None:
        super().__init__(message)
        self.line = line
        self.column = column


class SynthesisError(ExceptionBase):
    """Exception raised while generating synthetic data."""


class BalanceError(SynthesisError):
    """Thrown when per-class instance targets cannot be met."""


class MissingInputError(ExceptionBase):
    """Exception to indicate that a referenced file or asset does not exist."""


class MethodConfigError(ExceptionBase):
    """Exception to indicate that a method lacks the parts or hyperparameters it needs."""


class PerturbationError(ExceptionBase, ValueError):
    """Exception to indicate an unknown corruption or severity."""
