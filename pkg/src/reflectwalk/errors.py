"""Exception hierarchy shared by all modules."""


class ReflectWalkError(Exception):
    """Base class for every error raised by the package."""


class UsageError(ReflectWalkError, ValueError):
    """Bad arguments: wrong dimension, violated precondition, unknown name."""


class ConfigError(UsageError):
    """Invalid run configuration. ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ModelError(ReflectWalkError):
    """The problem data violate a modelling assumption (ellipticity, obliqueness, sign of c)."""


class NumericError(ReflectWalkError, ArithmeticError):
    """An iterative solve did not converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ProjectionAmbiguityError(NumericError):
    """Exterior point is farther from the boundary than the allowed reach.

    Raised when the step size is too large for the curvature of the domain,
    so the nearest boundary point can no longer be trusted to be unique.
    """
