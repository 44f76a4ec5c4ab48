"""Exception taxonomy shared by every engine module.

The CLI maps these onto exit codes: ConfigError -> 2, DataError and its
subclasses -> 3, everything else -> 1.
"""


class ToadError(Exception):
    """Base class for all engine errors."""


class ShapeError(ToadError):
    """Operand extents do not match the kernel's contract."""


class NumericsError(ToadError):
    """A kernel produced NaN or Inf, or was fed non-finite input."""


class DegenerateInputError(ToadError):
    """Mathematically undefined input, e.g. normalizing a zero vector."""


class ConfigError(ToadError):
    """Invalid or inconsistent run configuration."""


class DataError(ToadError):
    """Dataset-level problem: missing files, empty classes, bad dims."""


class LabelError(DataError):
    """A class label is outside the valid range."""


class ParseError(DataError):
    """Malformed binary container. Carries the byte offset of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagicError(ParseError):
    pass


class TruncatedFileError(ParseError):
    pass


class MetricError(ToadError):
    """A metric is undefined for the given inputs (e.g. no positives)."""


class TrainingAbortedError(ToadError):
    """Training stopped hard, e.g. a non-finite gradient."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (at optimizer step {step})")
        self.step = step
