"""Streaming per-frame action detection with a frozen text-embedding classifier."""

__version__ = "0.1.0"

from .errors import (
    BadMagicError,
    ConfigError,
    DataError,
    DegenerateInputError,
    LabelError,
    MetricError,
    NumericsError,
    ParseError,
    ShapeError,
    ToadError,
    TrainingAbortedError,
    TruncatedFileError,
)

__all__ = [
    "__version__",
    "BadMagicError",
    "ConfigError",
    "DataError",
    "DegenerateInputError",
    "LabelError",
    "MetricError",
    "NumericsError",
    "ParseError",
    "ShapeError",
    "ToadError",
    "TrainingAbortedError",
    "TruncatedFileError",
]
