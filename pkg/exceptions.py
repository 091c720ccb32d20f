"""
Exception hierarchy for the WSSL toolkit.
Every error carries the CLI exit code it maps to.
"""

from typing import Optional

from pydantic import ValidationError


class WSSLError(Exception):
    """Base class for all toolkit errors"""
    exit_code: int = 1


class ConfigError(WSSLError):
    """Invalid or inconsistent configuration"""
    exit_code = 2


class SchemaError(ConfigError):
    """A file does not follow its documented schema"""


class RejectedInputError(WSSLError, ValueError):
    """An operation received an argument outside its contract"""
    exit_code = 2


class DegenerateInputError(RejectedInputError):
    """Input is well-formed but degenerate (e.g. an empty organ mask)"""


class UndefinedMetricError(WSSLError, ValueError):
    """Metric is undefined for the given labels (e.g. a single class)"""
    exit_code = 4


class StorageError(WSSLError, OSError):
    """Reading or writing a dataset or run file failed"""
    exit_code = 3


class NumericalError(WSSLError):
    """Training produced a non-finite loss"""
    exit_code = 4


class PipelineStageError(WSSLError):
    """Wraps a failure with the name of the pipeline stage it happened in"""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"[{stage}] {cause}")


class DegenerateVolumeWarning(UserWarning):
    """Volume has (near) zero variance; normalization returned zeros"""


def exit_code_for(error: Optional[BaseException]) -> int:
    if error is None:
        return 0
    if isinstance(error, WSSLError):
        return error.exit_code
    if isinstance(error, ValidationError):
        return 2
    if isinstance(error, OSError):
        return 3
    return 1
