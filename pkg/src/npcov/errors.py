"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands or declared geometry do not compose."""


class LoadError(ValueError):
    """A container file is malformed; message carries the byte offset."""


class GraphModelMismatch(ValueError):
    """A decision graph was built for a different model."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""
