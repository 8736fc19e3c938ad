"""Exception types shared across the package."""


class TalkfieldError(Exception):
    """Base class for package errors."""


class InputShapeError(TalkfieldError, ValueError):
    """An image or audio window has the wrong shape or out-of-range values."""


class DimensionError(TalkfieldError, ValueError):
    """Vector or tensor lengths do not line up."""


class PoseValidationError(TalkfieldError, ValueError):
    """Camera rotation is not a proper orthonormal matrix."""


class NumericError(TalkfieldError, ValueError):
    """Non-finite values where finite ones are required."""


class ArgumentError(TalkfieldError, ValueError):
    """Invalid argument value (empty batch, non-positive rate, ...)."""


class CheckpointError(TalkfieldError, RuntimeError):
    """Checkpoint does not match the loading run."""
