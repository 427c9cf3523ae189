"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A config value is invalid or inconsistent (bad resolution, key, range)."""


class ShapeMismatchError(ValueError):
    """Tensor shape or resolution does not match what the operation expects."""


class CheckpointMismatchError(RuntimeError):
    """Checkpoint payload is incompatible with the active configuration."""


class CapabilityError(RuntimeError):
    """A pluggable component (extractor, embedder) required here was not provided."""


class TrainingDivergedError(RuntimeError):
    """Training aborted on a non-finite loss; the last good checkpoint is retained."""

    def __init__(self, message: str, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
