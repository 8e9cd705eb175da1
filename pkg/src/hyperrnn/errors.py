"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are inconsistent with the operation's contract."""


class DomainError(ValueError):
    """A numeric argument lies outside the operation's domain."""


class DegeneratePilotError(ValueError):
    """A pilot entry/column has zero norm and cannot be power-normalized."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = iteration
        super().__init__(message or f"training diverged at iteration {iteration}")


class CheckpointMismatchError(ValueError):
    """A checkpoint's tensors do not match the shapes implied by a config."""
