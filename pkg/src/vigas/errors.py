"""Exception hierarchy shared by all vigas modules."""


class VigasError(Exception):
    """Base class for library errors."""


class InvalidInput(VigasError, ValueError):
    """An argument violates an operation's preconditions."""


class InvalidConfig(VigasError, ValueError):
    """A configuration value is out of range or inconsistent."""


class ConfigInfeasible(VigasError, RuntimeError):
    """Rejection sampling could not satisfy the configured constraints."""


class EstimationFailed(VigasError, RuntimeError):
    """An estimator could not produce a meaningful value for its input."""


class NumericalError(VigasError, ArithmeticError):
    """A loss or gradient became non-finite."""

    def __init__(self, message, clip_id=None):
        super().__init__(message)
        self.clip_id = clip_id
