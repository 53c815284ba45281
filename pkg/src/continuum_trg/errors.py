"""Exception hierarchy shared by all modules.

Errors deriving from ``NumericalError`` map to CLI exit code 3, errors
deriving from ``ValidationError`` map to exit code 2.
"""


class ContinuumTRGError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(ContinuumTRGError):
    """Bad user input (configuration, arguments)."""


class NumericalError(ContinuumTRGError):
    """A numerical invariant failed during a computation."""


class InvalidConfig(ValidationError):
    pass


class Unsupported(ValidationError):
    pass


class InvalidMatrix(NumericalError):
    pass


class SingularMatrix(NumericalError):
    """Raised when a matrix that must be positive definite is not.

    ``index`` is the position of the offending eigenvalue in descending
    order and ``value`` the eigenvalue itself.
    """

    def __init__(self, index, value, message=None):
        self.index = int(index)
        self.value = float(value)
        super().__init__(message or f"eigenvalue #{self.index} = {self.value:.3e} is below the positive-definite tolerance")


class DegenerateWeight(NumericalError):
    pass


class StructureViolation(NumericalError):
    pass


class InternalInvariantViolation(NumericalError):
    pass


class NonNormalizableTrace(NumericalError):
    pass


class PhaseBookkeepingError(NumericalError):
    pass


class OddLifetimeViolation(NumericalError):
    pass


class ParityError(NumericalError):
    pass


class InvalidSpace(ValidationError):
    pass


class NonNormalizable(ValidationError):
    pass


class ResolutionWarning(UserWarning):
    """Quadrature grid too coarse to resolve the requested spectrum."""
