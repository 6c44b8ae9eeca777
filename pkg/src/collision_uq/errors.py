"""Exception types shared across the package."""

from __future__ import annotations


class DimensionError(ValueError):
    """Shapes of inputs do not agree."""


class SingularMatrixError(ArithmeticError):
    """A linear system could not be solved reliably."""

    def __init__(self, message: str, pivot_index: int | None = None):
        super().__init__(message)
        self.pivot_index = pivot_index


class DegenerateVectorError(ValueError):
    """A vector has no positive mass to normalise."""


class QuadratureError(ArithmeticError):
    def __init__(self, message: str, achieved_tolerance: float):
        super().__init__(message)
        self.achieved_tolerance = achieved_tolerance


class TrainingDivergenceError(ArithmeticError):
    """Loss became non-finite during training; carries the loss trace so far."""

    def __init__(self, message: str, trace: list[float] | None = None):
        super().__init__(message)
        self.trace = list(trace or [])


class UnusableClassError(ValueError):
    def __init__(self, message: str, class_index: int):
        super().__init__(message)
        self.class_index = class_index


class ModelStateError(RuntimeError):
    """Model used before it was trained."""


class NonConvergenceError(ArithmeticError):
    """Recovery descent stopped above the residual threshold.

    ``best`` holds the best iterate (already projected onto the row simplex)
    and ``report`` the convergence report for it.
    """

    def __init__(self, message: str, best, report):
        super().__init__(message)
        self.best = best
        self.report = report


class ConfigError(ValueError):
    """Invalid experiment configuration."""
