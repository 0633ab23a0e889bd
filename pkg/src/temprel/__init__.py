"""Bayesian translational models for event temporal relation extraction."""

__version__ = "0.1.0"

from .exceptions import (
    ConfigurationError,
    DataFormatError,
    InvalidInputError,
    TrainingError,
)

__all__ = [
    "ConfigurationError",
    "DataFormatError",
    "InvalidInputError",
    "TrainingError",
    "__version__",
]
