"""Exception taxonomy shared by all qhedge modules."""


class QhedgeError(Exception):
    """Base class for all package errors."""


class DomainError(QhedgeError, ValueError):
    """An argument lies outside the mathematical domain of an operation
    (non-positive price, probability outside [0, 1], ...)."""


class UsageError(QhedgeError, ValueError):
    """An operation was called in a way its contract forbids
    (empty control grid, missing time layer, shift rate below the
    Lipschitz constant, ...)."""


class ConfigurationError(QhedgeError):
    """A configuration is internally inconsistent or violates a stability
    audit; raised before any time stepping starts."""


class ConvexityError(QhedgeError):
    """A slice handed to the exercise-date operator violates its convexity
    precondition beyond tolerance."""


class NumericalAbort(QhedgeError):
    """A solve produced NaN/inf or otherwise lost validity mid-run."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class UnsupportedRegimeError(QhedgeError, ValueError):
    """A closed-form oracle was asked for a parameter regime in which its
    derivation is invalid (e.g. non-positive drift for the digital
    quantile price)."""
