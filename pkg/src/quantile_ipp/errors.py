"""Exception types shared across the package."""


class FieldFormatError(ValueError):
    """Malformed raster file (ragged CSV, bad PGM header)."""


class DimensionError(ValueError):
    """Raster shape does not match the grid geometry."""


class RangeError(ValueError):
    """Raster value outside the declared intensity range."""


class DomainError(ValueError):
    """Argument outside the domain of an operation."""


class NumericError(ArithmeticError):
    """Non-finite input or failed factorization."""


class PlanningError(RuntimeError):
    """Raised when a robot has no legal move."""


class DegenerateSampleError(ValueError):
    """All paired differences are zero."""


class PairingError(ValueError):
    """Groups cannot be paired on their shared keys."""


class ConfigError(ValueError):
    """Inconsistent or malformed mission / sweep configuration."""
