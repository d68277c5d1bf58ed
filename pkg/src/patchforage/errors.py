"""Exception types raised across the package."""


class ConfigError(ValueError):
    """A configuration value violates one of its invariants."""


class EpisodeCompleteError(RuntimeError):
    """Raised when stepping a world whose episode has already ended."""


class SolverError(RuntimeError):
    """A solver sweep finished without finding a solution."""


class DegenerateDesignError(ValueError):
    """Regression or correlation input carries no usable variation."""


class SampleSizeError(ValueError):
    """Too few observations for the requested statistic."""


class DependencyError(RuntimeError):
    """An analysis was requested without the inputs it depends on."""


class LogParseError(ValueError):
    """A JSONL episode log is malformed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
