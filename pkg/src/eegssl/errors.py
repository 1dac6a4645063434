"""Exception hierarchy shared across the package."""


class EegSslError(Exception):
    """Base class for all errors raised by eegssl."""


class ShapeError(EegSslError, ValueError):
    """Operand shapes are incompatible with an operation."""


class DomainError(EegSslError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class NumericError(EegSslError, FloatingPointError):
    """NaN or infinite values where finite ones are required."""


class DegenerateError(EegSslError, ValueError):
    """Zero variance or a constant signal where spread is required."""


class FeatureError(DegenerateError):
    """Feature extraction hit degenerate windows.

    ``flags`` lists ``(window, channel, band)`` triples that could not be
    computed.
    """

    def __init__(self, message, flags=()):
        super().__init__(message)
        self.flags = list(flags)


class UnsupportedError(EegSslError, ValueError):
    """Requested parameters are not supported (e.g. upsampling)."""


class ScheduleError(EegSslError, ValueError):
    """Epoch index outside the ramp-up schedule."""


class TrainingError(EegSslError, RuntimeError):
    """Optimizer or training-loop contract violation."""


class ProtocolError(TrainingError):
    """Mini-batch protocol violation (e.g. a batch with no labeled samples)."""


class ContractError(TrainingError):
    """An invariant of a trainer was broken (e.g. teacher received gradients)."""


class SchemaError(EegSslError, ValueError):
    """A data file does not match its documented schema."""


class SplitError(EegSslError, ValueError):
    """A labeled/unlabeled split cannot be produced."""


class ConfigError(EegSslError, ValueError):
    """Invalid experiment configuration."""
