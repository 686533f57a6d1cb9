"""Exception types shared across the package."""


class S2FPNError(Exception):
    """Base class for package errors."""


class ShapeError(S2FPNError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(S2FPNError, ValueError):
    """Invalid configuration (bad key, bad value, incompatible widths)."""


class StateError(S2FPNError, RuntimeError):
    """Operation requested in an invalid state (e.g. eval before stats exist)."""


class CheckpointError(S2FPNError, RuntimeError):
    """Checkpoint file malformed or incompatible with the model."""


class DataError(S2FPNError, RuntimeError):
    """Dataset/image files missing, unreadable, or inconsistent."""


class NumericCheckError(S2FPNError, RuntimeError):
    """A numeric verification (gradient check, finiteness assert) failed."""
