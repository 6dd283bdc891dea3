"""Exception types shared across the lab."""


class DriftLabError(Exception):
    """Base class for all lab errors."""


class ConfigError(DriftLabError, ValueError):
    """Inconsistent or invalid configuration."""


class DimensionError(DriftLabError, ValueError):
    """Array shapes do not line up."""


class DomainError(DriftLabError, ValueError):
    """Scalar argument outside its admissible range."""


class SingularityError(DomainError):
    """Evaluation too close to the t = 1 pole of the exact restorative velocity."""


class NumericError(DriftLabError, ArithmeticError):
    """A computation produced non-finite values."""


class TrainingError(NumericError):
    """Training diverged."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
