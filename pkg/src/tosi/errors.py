"""Exception hierarchy shared by every module."""


class TosiError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(TosiError, ValueError):
    """An argument lies outside the domain of the operation."""


class SingularityError(TosiError, ArithmeticError):
    """A variance or covariance estimate is (numerically) singular.

    ``index`` names the offending parameter index when one is known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConvergenceError(TosiError, ArithmeticError):
    """An iterative solver hit its iteration cap; ``residual`` is the last KKT residual."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class TooFewObservationsError(DomainError):
    pass


class DegreesOfFreedomError(DomainError):
    pass


class NoFactorError(TosiError):
    pass
