"""Exception types shared across the package."""


class ContractViolation(RuntimeError):
    """An operation was called in a state its contract forbids."""


class DegenerateInputError(ValueError):
    """Numerically degenerate input (e.g. a zero-norm vector) where a guard is not available."""


class FormatError(ValueError):
    """A persisted container is malformed, truncated, or fails its checksum."""


class ConfigError(ValueError):
    """Invalid configuration. ``path`` points at the offending key."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class IngestionError(RuntimeError):
    """A dataset source could not be ingested."""


class EvaluationError(RuntimeError):
    """An evaluation probe failed on a specific input."""
