"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument violates a documented precondition."""


class DataFormatError(ValueError):
    """A binary or text input file does not match its declared format."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of an operation."""


class NumericalError(RuntimeError):
    """A numerical routine failed or produced an unusable result."""


class DivergenceError(NumericalError):
    """Training loss blew up; carries the epoch at which it happened."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
