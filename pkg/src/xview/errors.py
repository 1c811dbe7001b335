"""Exception hierarchy shared by all xview modules."""


class XviewError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(XviewError):
    """Shapes or dimensions of inputs do not conform."""


class ParameterError(XviewError):
    """A hyperparameter or argument is outside its valid range."""


class StateError(XviewError):
    """An operation was invoked in an invalid state (e.g. reverse pass
    without a recorded forward)."""


class ContractError(XviewError):
    """A caller-supplied callable violated its contract (e.g. a loss
    fragment that is not deterministic)."""


class ConfigError(XviewError):
    """A configuration is structurally invalid."""


class DataError(XviewError):
    """Input data is malformed, out of range, or missing."""


class FormatError(DataError):
    """A binary or text container is corrupt or has the wrong layout."""


class CheckpointError(DataError):
    """A checkpoint is structurally incompatible with the target model."""


class NumericError(XviewError):
    """A numeric invariant was violated (NaN/Inf in a tensor)."""


class NumericAbort(XviewError):
    """Training produced a non-finite loss and was aborted."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class UsageError(XviewError):
    """Command-line usage error (bad flags, missing required inputs)."""
