"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class FormatError(OSError):
    """A file exists but cannot be parsed."""


class VersionMismatchError(FormatError):
    """A checkpoint or document carries an unexpected format tag."""


class EvaluationError(RuntimeError):
    """Metrics cannot be computed (empty or degenerate meshes)."""


class GuidanceError(RuntimeError):
    """The guidance backend failed or produced non-finite predictions."""


class TrainingDivergedError(RuntimeError):
    """A training loss became non-finite."""
