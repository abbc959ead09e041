"""
Geoward Core Infrastructure

Exceptions, numeric kernels, logging setup and the ordered parallel map.
"""

from .exceptions import (
    GeowardError,
    ConfigurationError,
    InvalidInputError,
    FormatError,
    CapacityError,
    DegenerateInputError,
    NumericalFailureError,
    SingularMatrixError,
    NonConvergenceError,
)

__all__ = [
    "GeowardError",
    "ConfigurationError",
    "InvalidInputError",
    "FormatError",
    "CapacityError",
    "DegenerateInputError",
    "NumericalFailureError",
    "SingularMatrixError",
    "NonConvergenceError",
]
