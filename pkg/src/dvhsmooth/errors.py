"""Exception hierarchy shared by all modules."""


class DvhSmoothError(Exception):
    """Base class for every error raised by the package."""


class InvalidArgumentError(DvhSmoothError, ValueError):
    pass


class DegenerateCriticalPointError(DvhSmoothError):
    """A critical point with (numerically) singular Hessian was found."""

    def __init__(self, message, location=None, hessian_det=None):
        super().__init__(message)
        self.location = location
        self.hessian_det = hessian_det


class TrackingLostError(DvhSmoothError):
    pass


class BracketInvalidError(DvhSmoothError, ValueError):
    pass


class FitFailedError(DvhSmoothError):
    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


class NumericalDomainError(DvhSmoothError, ArithmeticError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class IllConditionedStepError(DvhSmoothError, ArithmeticError):
    pass


class InsufficientDataError(DvhSmoothError, ValueError):
    pass


class ConfigError(DvhSmoothError, ValueError):
    """Malformed or inconsistent experiment configuration."""
