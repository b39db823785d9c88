"""Exception hierarchy shared by all modules."""


class DivbarError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(DivbarError, ValueError):
    pass


class DomainError(DivbarError, ValueError):
    pass


class NonPositiveVolatility(ParameterError):
    pass


class IntegrationFailure(DivbarError, RuntimeError):
    pass


class DiagonalError(DomainError):
    """The boundary field is undefined on or below the diagonal y <= x."""


class NotFound(DivbarError, RuntimeError):
    def __init__(self, message, cap=None):
        super().__init__(message)
        self.cap = cap


class StepFailure(IntegrationFailure):
    pass


class NoConvergence(DivbarError, RuntimeError):
    pass


class MembershipViolation(DivbarError, RuntimeError):
    pass
