"""Exception types shared across the package."""


class FewtsError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(FewtsError, ValueError):
    """Invalid configuration value, shape mismatch, or malformed argument."""


class UsageError(FewtsError, RuntimeError):
    """API misuse: stale caches, uninitialized statistics, wrong call order."""


class ParseError(FewtsError, ValueError):
    """Malformed dataset file. Carries the offending line number when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix += f"{path}:"
        if line is not None:
            prefix += f"{line}:"
        super().__init__(f"{prefix} {message}" if prefix else message)


class SamplingError(FewtsError, ValueError):
    """A task cannot be drawn from the requested pools."""


class TaskDegenerateError(FewtsError, ValueError):
    """Task cannot form a single triplet (fewer than 2 classes, or no class
    with 2 instances)."""


class CheckpointError(FewtsError, ValueError):
    """Corrupt or incompatible checkpoint file."""
