"""Exception types shared across the library.

The CLI maps ConfigError subclasses to exit code 2 and DataError
subclasses to exit code 3.
"""


class RangeforgeError(Exception):
    """Base class for all library errors."""


class ConfigError(RangeforgeError):
    """Invalid configuration or parameters."""


class DataError(RangeforgeError):
    """Invalid, unreadable, or inconsistent data."""


class NonFiniteCoordinate(DataError):
    """A point coordinate is NaN or infinite."""


class PointBelowFirstEdge(DataError):
    """A point is closer than the first ring edge of a range spec."""


class TruncatedFile(DataError):
    """Binary point file length is not a whole number of records."""


class SchemaViolation(DataError):
    """A label or config document does not match its schema."""


class InsufficientFrames(DataError):
    """A manifest is too short for the requested subset sizes."""


class LengthMismatch(ConfigError):
    """A per-ring parameter vector does not match the ring count."""


class ResolutionBelowNative(ConfigError):
    """Requested grid resolution is finer than the sensor supports."""


class ResolutionAboveNative(ConfigError):
    """Interpolation requested at a resolution that is not finer than native."""


class UnknownClass(ConfigError):
    """A box carries a class label absent from the evaluation config."""


class NegativeScore(DataError):
    """A detection score is missing or negative."""


class InvalidApVector(DataError):
    """An objective produced AP values outside [0, 1]."""


class EvaluationFailed(RangeforgeError):
    """One objective evaluation failed (timeout, bad exit, bad output).

    Recorded in the chain history as a rejected proposal; the chain
    continues.
    """


class ObjectiveFailure(RangeforgeError):
    """The objective raised unexpectedly; the chain aborts after
    checkpointing."""

    def __init__(self, iteration, message=""):
        self.iteration = iteration
        super().__init__(message or f"objective failed at iteration {iteration}")


class WorkspaceLocked(ConfigError):
    """Another live process owns the optimization workspace."""
