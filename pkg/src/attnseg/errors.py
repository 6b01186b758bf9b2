"""Exception types shared across the library."""


class ShapeError(ValueError):
    """Operands have incompatible shapes or an invalid dimensionality."""


class NumericsError(ArithmeticError):
    """A computation produced NaN or infinity."""


class ConfigError(ValueError):
    """A configuration file or value is invalid."""


class DataError(ValueError):
    """A dataset file or label map is invalid."""


class CheckpointError(RuntimeError):
    """A checkpoint file is corrupt or does not match the model."""
