"""Exception types raised across the package."""


class AgtFusionError(Exception):
    """Base class for every error raised deliberately by agtfusion."""


class DimensionError(AgtFusionError, ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(AgtFusionError, FloatingPointError):
    """A forward value or gradient became NaN or infinite."""


class DataError(AgtFusionError, ValueError):
    """Malformed or inconsistent input data (files, labels, ids)."""


class ConfigError(AgtFusionError, ValueError):
    """Invalid parameter or configuration value."""
