"""Error types raised across the package."""


class DualCodecError(Exception):
    """Base class for all package errors."""


class ConfigError(DualCodecError, ValueError):
    """Invalid configuration value."""


class DimensionError(DualCodecError, ValueError):
    """Incompatible tensor shapes."""


class LengthError(DualCodecError, ValueError):
    """Signal or sequence too short for the requested operation."""


class StateError(DualCodecError, RuntimeError):
    """Operation invoked in the wrong state (e.g. backward twice)."""


class DataError(DualCodecError, ValueError):
    """Payload values outside their valid domain (tokens, grid levels, files)."""


class DomainError(DualCodecError, ValueError):
    """Scalar argument outside its mathematical domain (e.g. sigma range)."""


class SymmetryError(DimensionError):
    """Cross-connection shapes do not mirror the decoder patchifier."""


class UsageError(DualCodecError, ValueError):
    """Payload type does not match the requested operation."""


class NonFiniteError(DualCodecError, FloatingPointError):
    """NaN or infinity encountered in a loss or gradient."""
