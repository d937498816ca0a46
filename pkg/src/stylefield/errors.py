"""Exception types shared across the pipeline."""


class StyleFieldError(Exception):
    """Base class for all library errors."""


class ValidationError(StyleFieldError, ValueError):
    """An input violated a documented precondition or invariant."""


class StateError(StyleFieldError, RuntimeError):
    """An operation was invoked in a state it does not support
    (missing checkpoint, untrained model, locked run directory)."""


class CheckpointError(StyleFieldError):
    """Base class for checkpoint load failures."""


class CheckpointCorruptError(CheckpointError):
    """The archive could not be deserialized (truncated or garbage)."""


class CheckpointVersionError(CheckpointError):
    """The archive's format version is not one this code reads."""


class CheckpointStageError(CheckpointError):
    """The archive belongs to a different pipeline stage than expected."""


class CheckpointDigestError(CheckpointError):
    """A recorded weight or upstream digest does not match the payload."""
