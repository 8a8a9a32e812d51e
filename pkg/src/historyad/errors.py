"""Exception hierarchy shared by every stage of the pipeline."""


class HistoryADError(Exception):
    """Base class for all package errors."""


class ContractError(HistoryADError, ValueError):
    """A precondition on arguments was violated."""


class DimensionError(ContractError):
    """Array shapes do not agree with a network or dataset."""


class NumericError(HistoryADError, ArithmeticError):
    """A non-finite value appeared during a computation.

    ``where`` names the component (layer index, loss term, stage) that
    produced it so divergence can be traced.
    """

    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{message} [{where}]")
        self.where = where


class FormatError(HistoryADError, ValueError):
    """A persisted file is malformed; ``offset`` is the byte position."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (offset {offset})")
        self.offset = offset


class ConfigError(HistoryADError, ValueError):
    """An experiment configuration key is missing, unknown or out of range."""

    def __init__(self, key, constraint):
        super().__init__(f"{key}: {constraint}")
        self.key = key
        self.constraint = constraint


class PipelineError(HistoryADError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
