"""
errors.py - exception types raised across the event-memory pipeline.

Validation errors subclass ValueError so callers can catch them broadly.
"""


class ShapeError(ValueError):
    """Tensor dimensions do not fit the operation."""


class TensorFormatError(ValueError):
    """A HEMT or JSON tensor payload is malformed."""


class ConfigError(ValueError):
    """A configuration value is out of range or unknown."""


class PipelineStageError(RuntimeError):
    """A pipeline stage failed; the message starts with the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
