"""Exception hierarchy shared by every panfuse module."""


class PanfuseError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(PanfuseError, ValueError):
    """Structurally invalid input: bad shapes, ranges, or modes."""


class DegenerateInputError(PanfuseError, ValueError):
    """Input is well formed but statistically degenerate (e.g. zero variance)."""


class NumericalError(PanfuseError, ArithmeticError):
    """A numerical procedure failed: singular system, non-finite values."""


class TrainingDivergenceError(NumericalError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class FormatError(PanfuseError, ValueError):
    """Malformed container file; the message names the failing byte offset."""


class ShapeError(InvalidInputError):
    """Tensor shape mismatch; the message names both shapes."""


class ConfigError(InvalidInputError):
    """Bad run-configuration key or value; the message names the key."""
