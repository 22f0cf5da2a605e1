"""Exception hierarchy shared across the package."""


class TumorCNNError(Exception):
    """Base class for all package errors."""


class DimensionError(TumorCNNError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(TumorCNNError, ValueError):
    """An argument lies outside the domain of the operation."""


class ContractError(TumorCNNError, ValueError):
    """A documented precondition of a call was violated."""


class BuildError(TumorCNNError, ValueError):
    """A model specification cannot be instantiated."""


class DatasetError(TumorCNNError):
    """The dataset layout is unusable."""


class ImageError(TumorCNNError):
    """An image file could not be decoded."""

    def __init__(self, path, reason):
        super().__init__(f"cannot decode image {path}: {reason}")
        self.path = path


class PlanError(TumorCNNError, ValueError):
    """A cross-validation plan cannot be built."""


class CheckpointError(TumorCNNError):
    """A checkpoint file is malformed."""
