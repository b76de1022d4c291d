"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigurationError -> 2,
DataError -> 3, NumericError / TrainingError -> 4.
"""


class GkanctError(Exception):
    """Base class for all package errors."""


class DimensionError(GkanctError):
    """Shape or size mismatch between operands."""


class ConfigurationError(GkanctError):
    """Invalid configuration value or inconsistent geometry."""


class DataError(GkanctError):
    """Input files missing, malformed, or inconsistent with their sidecar."""


class DomainError(GkanctError):
    """Argument outside the mathematical domain of an operation."""


class NumericError(GkanctError):
    """Non-finite values encountered during numeric computation."""


class TrainingError(GkanctError):
    """Optimization diverged or otherwise failed."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
