"""Exception types shared across the package."""


class DualGnnError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(DualGnnError, ValueError):
    """Operands have incompatible or malformed shapes."""


class InvalidParameterError(DualGnnError, ValueError):
    """A parameter value is outside its valid domain."""


class DegenerateDegreeError(DualGnnError, ValueError):
    """A matrix row has non-positive degree and cannot be normalized."""


class InvalidSplitError(DualGnnError, ValueError):
    """A train/val/test split violates a structural requirement."""


class EvaluationError(DualGnnError, ValueError):
    """An evaluation request is ill-posed (e.g. a class absent from truth)."""


class DatasetFormatError(DualGnnError, ValueError):
    """A dataset directory or file does not match the documented format."""


class CheckpointFormatError(DualGnnError, ValueError):
    """A checkpoint file is malformed or inconsistent with the model."""


class TrainingAbortedError(DualGnnError, RuntimeError):
    """Training stopped because the loss or gradients became non-finite."""
