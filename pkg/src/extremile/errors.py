"""Exception hierarchy shared by the fitting, inference and simulation code."""

from __future__ import annotations


class ExtremileError(Exception):
    """Base class for all package errors."""


class DomainError(ExtremileError, ValueError):
    """An argument lies outside the domain of the operation."""


class EvaluationError(ExtremileError, ArithmeticError):
    """A loss, basis or integrand evaluated to a non-finite value."""


class DesignError(ExtremileError, ValueError):
    """The design matrix is rank deficient or otherwise unusable.

    ``columns`` lists the indices of columns found to be linearly dependent
    on the others (empty when not applicable).
    """

    def __init__(self, message: str, columns: tuple[int, ...] = ()):
        super().__init__(message)
        self.columns = tuple(columns)


class ConvergenceError(ExtremileError, RuntimeError):
    """The optimizer hit its iteration budget.

    The best iterate found so far is kept on ``best`` so callers can inspect
    or reuse it.
    """

    def __init__(self, message: str, best=None, grad_norm: float = float("nan")):
        super().__init__(message)
        self.best = best
        self.grad_norm = grad_norm


class EstimationError(ExtremileError, ValueError):
    """A nonparametric estimate could not be formed (e.g. no kernel mass)."""


class SingularMatrixError(ExtremileError, ValueError):
    """A matrix that must be inverted is singular beyond tolerance."""


class ConfigError(ExtremileError, ValueError):
    """Invalid simulation or command configuration.

    ``field`` names the offending configuration field when known.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class SchemaError(DomainError):
    """Two inputs that must share a column layout do not."""
