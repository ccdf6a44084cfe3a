"""Exception types raised by the toolkit."""


class TownsendError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameters(TownsendError, ValueError):
    pass


class InvalidRange(TownsendError, ValueError):
    pass


class DomainError(TownsendError, ValueError):
    """An argument lies outside the domain of a function (e.g. V_c <= 0)."""


class NotARoot(TownsendError, ValueError):
    """The supplied voltage is not a root of the sparking function."""


class NoSparkingVoltage(TownsendError):
    pass


class DomainViolation(TownsendError):
    """A state left the admissible set where the field dV/dx + lambda is positive."""

    def __init__(self, message, min_field=None):
        super().__init__(message)
        self.min_field = min_field


class NoConvergence(TownsendError):
    def __init__(self, message, residual_norms=()):
        super().__init__(message)
        self.residual_norms = list(residual_norms)


class SingularJacobian(TownsendError):
    pass


class SeedFailure(TownsendError):
    pass


class WrongTerminationKind(TownsendError):
    pass


class NotApplicable(TownsendError):
    pass
