"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class LatentFPError(Exception):
    """Base class for all package errors."""


class ShapeError(LatentFPError, ValueError):
    """Tensor or image dimensions are incompatible with an operation."""


class DataError(LatentFPError):
    """Input files are missing, malformed or inconsistent."""


class FormatError(DataError):
    """A file could not be parsed; ``offset`` is the byte position of failure."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(LatentFPError, ArithmeticError):
    """A NaN/Inf appeared where finite values are required."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
