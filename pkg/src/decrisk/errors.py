"""Exception types shared across the package."""


class DecriskError(Exception):
    """Base class for all package errors."""


class ContractViolation(DecriskError):
    """A documented precondition was violated (bad dimension, bad range)."""


class DegenerateProblem(DecriskError):
    """The problem instance has no usable curvature or elasticity."""


class UnsupportedModel(DecriskError):
    """The requested computation is outside the model family it supports."""


class SolverError(DecriskError):
    """An iterative solver failed to converge within its caps."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class IngestionError(DecriskError):
    """Input data could not be cleaned or a block was excluded."""


class ValidationError(DecriskError):
    """A config failed validation; carries every violation found."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
