"""Exception types shared across the package."""


class FlowLabError(Exception):
    """Base class for all flowlab errors."""


class InvalidConfigError(FlowLabError):
    """A configuration value or precondition is invalid."""


class ShapeMismatchError(FlowLabError):
    """Operands have incompatible shapes or dimensions."""


class NumericalError(FlowLabError):
    """A numerical computation produced non-finite values."""


class InsufficientSamplesError(FlowLabError):
    """A Monte Carlo estimate has too small an effective sample size."""


class TrainingDivergedError(FlowLabError):
    """Training produced a non-finite loss."""


class ModelFormatError(FlowLabError):
    """A model file is malformed. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
