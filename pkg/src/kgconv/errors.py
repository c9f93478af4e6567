"""Exception types shared across the package."""


class KgconvError(Exception):
    """Base class for all package errors."""


class ParseError(KgconvError):
    """A line or record in an input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigurationError(KgconvError):
    """Inputs or settings that make the requested operation impossible."""


class ContractViolation(KgconvError):
    """An internal precondition documented in the API was violated."""


class DimensionError(KgconvError):
    """Tensor shapes inconsistent with the operation."""


class TrainingDiverged(KgconvError):
    """Non-finite loss or gradient encountered during training."""

    def __init__(self, message: str, batch: int | None = None):
        self.batch = batch
        if batch is not None:
            message = f"batch {batch}: {message}"
        super().__init__(message)


class StateError(KgconvError):
    """Operation not valid in the current session state."""
