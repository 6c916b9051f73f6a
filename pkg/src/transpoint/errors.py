"""Exception types shared across the package."""


class TranslatedPointError(Exception):
    """Base class."""


class CutLocusError(TranslatedPointError, ValueError):
    """A log map was requested at or beyond the cut locus."""


class IntegratorError(TranslatedPointError, FloatingPointError):
    """The fixed-step integrator produced non-finite values."""


class NotADiffeomorphismError(TranslatedPointError, ValueError):
    """The differential is not invertible (condition number too large)."""


class ConvergenceError(TranslatedPointError):
    """Newton iteration failed; ``reason`` is a short machine-readable tag."""

    def __init__(self, reason: str, message: str = ""):
        super().__init__(message or reason)
        self.reason = reason


class ConfigError(TranslatedPointError, ValueError):
    """Invalid configuration (CLI exit code 2)."""
