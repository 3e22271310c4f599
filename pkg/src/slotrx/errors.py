"""Exception types shared by all slotrx modules."""


class SlotrxError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SlotrxError):
    """Tensor or grid extents do not match the operation's contract."""


class ContractError(SlotrxError):
    """A precondition of an operation was violated."""


class StateError(SlotrxError):
    """An object was used in an invalid order (e.g. backward twice)."""


class ConfigError(SlotrxError):
    """Invalid or unsupported configuration value."""


class ModelValidationError(ConfigError):
    """Channel model parameters fail validation."""


class NumericalError(SlotrxError):
    """Non-finite values or a numerically unusable system."""


class CheckpointError(SlotrxError):
    """Checkpoint or tensor container could not be read or does not match."""
