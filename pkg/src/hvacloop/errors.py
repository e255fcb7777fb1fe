"""Exception types shared across the package."""


class HvacLoopError(Exception):
    """Base class for all package errors."""


class DimensionError(HvacLoopError, ValueError):
    """Sequence or matrix sizes do not line up."""


class ParameterError(HvacLoopError, ValueError):
    """A parameter value is outside its physical or mathematical domain."""


class NumericError(HvacLoopError, ValueError):
    """A numeric input is non-finite or otherwise unusable."""


class StateError(HvacLoopError, RuntimeError):
    """An object is not in the state an operation requires (e.g. a
    partially filled buffer or an incomplete estimation window)."""


class UsageError(HvacLoopError, ValueError):
    """An operation was called in a way its contract does not allow."""


class TranscriptionError(HvacLoopError, ValueError):
    """Dynamics could not be transcribed (dimension or layout mismatch)."""


class RangeError(HvacLoopError, ValueError):
    """A query point lies outside the supported range."""


class FormatError(HvacLoopError, ValueError):
    """An input file does not conform to the documented format."""


class ValidationError(HvacLoopError, ValueError):
    """Configuration or data content fails a validation rule."""


class SimulationError(HvacLoopError, RuntimeError):
    """The simulated plant produced a non-finite or diverging state."""
