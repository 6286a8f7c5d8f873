"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value violates an invariant; message names the invariant."""


class DataFormatError(ValueError):
    """A file or in-memory payload does not match an expected format or shape."""


class SnapshotError(DataFormatError):
    """Snapshot stream is truncated, corrupted, or has an unknown format version."""


class MetricsError(ValueError):
    """A metric's precondition is not met (e.g. too few clusters)."""


class SemanticLearnerError(ValueError):
    """The angular loss cannot be evaluated (no labeled entries, degenerate slices)."""


class NumericalError(RuntimeError):
    """Engine state became non-finite; carries the failing step index."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
