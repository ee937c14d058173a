"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so keep the classes coarse.
"""


class TppError(Exception):
    """Base class for all package errors."""


class ConfigError(TppError, ValueError):
    """Invalid configuration, spec, or shape mismatch."""


class DomainError(TppError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class EvaluationError(TppError, ArithmeticError):
    """A model produced an unusable value (e.g. zero intensity at an event)."""


class NumericError(TppError, ArithmeticError):
    """Singular system or other numerical breakdown."""


class ConstructionError(TppError):
    """A constructive build could not meet its error budget."""

    def __init__(self, message: str, component: str | None = None):
        super().__init__(message)
        self.component = component


class TrainingError(TppError):
    """Optimization diverged."""
