"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: configuration and usage
problems exit 2, data and file-format problems exit 3, numeric and
training failures exit 4.
"""


class MiakitError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(MiakitError):
    """Invalid experiment configuration."""

    exit_code = 2


class ParameterError(MiakitError):
    """Invalid argument to a library operation."""

    exit_code = 2


class DomainError(ParameterError):
    """Argument outside the mathematical domain of an operation."""


class InputShapeError(ParameterError):
    """Array argument with the wrong dimensions."""


class StateError(MiakitError):
    """Operation called on an object in the wrong lifecycle state."""

    exit_code = 2


class DataError(MiakitError):
    """Dataset content violates a required property."""

    exit_code = 3


class FormatError(DataError):
    """On-disk artifact is malformed."""


class TrainingError(MiakitError):
    """Training diverged or could not proceed."""

    exit_code = 4


class NumericError(MiakitError):
    """Non-finite values where finite ones are required."""

    exit_code = 4


class TapeError(MiakitError):
    """Backward pass called with a stale or mismatched forward tape."""

    exit_code = 4


class StageError(MiakitError):
    """Pipeline stage failure; wraps the causing error and names the stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
