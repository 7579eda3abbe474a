"""Exception types raised across the package."""


class ExpeditionError(Exception):
    """Base class for all package errors."""


class InvalidParametersError(ExpeditionError, ValueError):
    pass


class OutOfRangeError(ExpeditionError, ValueError):
    pass


class InvalidPriorError(ExpeditionError, ValueError):
    pass


class InvalidArgumentError(ExpeditionError, ValueError):
    pass


class NumericalError(ExpeditionError, ArithmeticError):
    """Raised when a factorization fails even after jitter escalation."""


class DegenerateWeightsError(ExpeditionError, ArithmeticError):
    """All particle likelihoods underflowed; widen the prior or the sensor sigma."""


class InfeasibleError(ExpeditionError, ValueError):
    pass


class ConfigError(ExpeditionError, ValueError):
    """Configuration failed validation.  ``field`` names the offending entry."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
