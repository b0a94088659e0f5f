"""Exception types shared across the package."""


class GdbError(Exception):
    """Base class for all package-specific errors."""


class FormatError(GdbError):
    """Unsupported or corrupt image file."""


class DatasetError(GdbError):
    """Dataset directory yields no usable document pairs."""


class CheckpointError(GdbError):
    """Checkpoint file is corrupt or incompatible with the model."""


class NumericalError(GdbError):
    """A forward/backward pass or loss produced NaN or Inf."""
