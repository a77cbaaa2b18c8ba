"""Exception hierarchy shared across the package.

Every error raised by pathqkd derives from :class:`PathQkdError`, so callers
(and the CLI) can distinguish our failures from programming errors.
"""


class PathQkdError(Exception):
    """Base class for all pathqkd errors."""


class InvalidStateError(PathQkdError):
    """A density matrix violates Hermiticity / trace / positivity tolerances."""


class InvalidParamError(PathQkdError):
    """A physical parameter is outside its allowed range."""


class ConfigError(PathQkdError):
    """A configuration (scenario, schedule, loop rates) is inconsistent."""


class DomainError(PathQkdError):
    """A numeric argument is outside the mathematical domain of an operation."""


class ValidationError(PathQkdError):
    """A data file or dataset fails structural validation."""


class EmptySettingError(ValidationError):
    """A measurement setting has zero total counts where counts are required."""


class BasisMismatchError(PathQkdError):
    """A QBER was requested for a setting where Alice and Bob bases differ."""


class NotNormalizedError(PathQkdError):
    """A probability block does not sum to one within tolerance."""


class NoConvergenceError(PathQkdError):
    """An iterative fit failed to reach its target residuals."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals if residuals is not None else {}
