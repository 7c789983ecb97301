"""Exception types raised across the enhancement engine."""


class ImageDecodeError(ValueError):
    """Raised when an image file cannot be decoded into a supported plane."""


class ShapeMismatchError(ValueError):
    """Raised when two image planes or tensors must be congruent but are not."""


class SingularityError(ArithmeticError):
    """Raised when a closed-form haze expression would divide by (near) zero."""


class ParameterBudgetError(ValueError):
    """Raised when a network configuration exceeds the parameter budget."""


class TapeError(RuntimeError):
    """Raised on misuse of the gradient tape (e.g. backward without forward)."""


class DegenerateSampleError(ValueError):
    """Raised when a sample collection cannot support a distribution fit."""


class InsufficientPatchesError(ValueError):
    """Raised when NIQE patch selection yields no usable patches."""


class ConfigError(ValueError):
    """Raised for invalid or unknown configuration values."""


class DatasetError(ValueError):
    """Raised when a dataset directory is empty or malformed."""


class CheckpointError(ValueError):
    """Raised when a checkpoint cannot be read or has the wrong format version."""


class ModelError(ValueError):
    """Raised when a NIQE model file is missing or malformed."""


class OptimizerError(RuntimeError):
    """Raised when an optimizer step is requested without gradients."""
