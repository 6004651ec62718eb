"""Simulation and analysis of cache-enabled wireless video networks."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    InvalidConfigError,
    InvalidParameterError,
    NumericalFailure,
    UnsupportedParametersError,
)

__all__ = [
    "__version__",
    "InvalidConfigError",
    "InvalidParameterError",
    "NumericalFailure",
    "UnsupportedParametersError",
]
