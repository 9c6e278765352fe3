class SwitchGameError(Exception):
    """Base class for package errors."""


class ConfigError(SwitchGameError, ValueError):
    """Invalid model or runtime configuration."""


class NumericalError(SwitchGameError, ArithmeticError):
    """A solver produced non-finite or otherwise unusable numbers."""
