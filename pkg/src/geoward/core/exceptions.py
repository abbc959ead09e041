"""
Geoward Exception Classes

Custom exception hierarchy for geoward errors. Each class carries the
process exit code the CLI reports for that failure class.
"""

from typing import Any, Optional


class GeowardError(Exception):
    """Base exception for all geoward errors."""

    exit_code: int = 1

    def __init__(self, message: str, details: Optional[dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def __str__(self):
        if self.details:
            return f"{self.message} | Details: {self.details}"
        return self.message


# Input Errors (exit code 2)
class ConfigurationError(GeowardError):
    """Invalid environment or CLI configuration."""

    exit_code = 2


class InvalidInputError(GeowardError):
    """Bad argument: wrong dimension, out-of-range index, bad shorthand, etc."""

    exit_code = 2


class FormatError(InvalidInputError):
    """Malformed file (IDX, checkpoint, plan JSON, CSV)."""

    def __init__(self, path: str, reason: str, details: Optional[dict[str, Any]] = None):
        super().__init__(f"Format error in {path}: {reason}", {"path": path, **(details or {})})


class CapacityError(InvalidInputError):
    """Problem too large for dense assembly."""

    def __init__(self, n: int, cap: int, suggestion: str = ""):
        message = f"Dimension {n} exceeds the dense metric cap of {cap}"
        if suggestion:
            message += f"; {suggestion}"
        super().__init__(message, {"n": n, "cap": cap})


class DegenerateInputError(InvalidInputError):
    """Input is valid but the requested construction is undefined for it."""


# Numerical Errors (exit code 3)
class NumericalFailureError(GeowardError):
    """Non-finite values, eigensolver failure, bisection failure."""

    exit_code = 3


class SingularMatrixError(NumericalFailureError):
    """Linear system could not be solved."""

    def __init__(self, dim: int, shift: float):
        super().__init__(
            f"Singular {dim}x{dim} system at shift mu={shift}",
            {"dim": dim, "mu": shift},
        )


# Convergence Errors (exit code 4)
class NonConvergenceError(GeowardError):
    """Iterative procedure exhausted its step budget."""

    exit_code = 4

    def __init__(self, message: str, partial: Any = None, details: Optional[dict[str, Any]] = None):
        super().__init__(message, details)
        self.partial = partial
