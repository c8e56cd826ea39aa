"""Exception hierarchy shared by every module."""


class TrajsimError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class DataError(TrajsimError):
    """Bad input data (exit code 2)."""


class ParseError(DataError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicatePointError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class FormatError(DataError):
    """Malformed binary file (bad magic, truncated payload)."""


class ConfigError(TrajsimError):
    """Invalid parameter value (exit code 1 from the CLI)."""


class DimensionError(TrajsimError, ValueError):
    pass


class DegenerateTripleError(DataError):
    pass


class DatasetTooSmallError(DataError):
    pass


class UnseenTrajectoryError(DataError):
    pass


class GenerationError(DataError):
    pass


class DivergenceError(TrajsimError):
    """Non-finite training loss (exit code 3)."""

    def __init__(self, epoch, learning_rate):
        super().__init__(
            f"training diverged at epoch {epoch} (learning_rate={learning_rate!r})"
        )
        self.epoch = epoch
        self.learning_rate = learning_rate
