"""Exception hierarchy shared by every stage of the pipeline."""


class TwinTestError(Exception):
    """Base class for all errors raised by dttest."""


class ConfigError(TwinTestError, ValueError):
    """A configuration file or object could not be loaded."""


class InvalidGeometryError(TwinTestError, ValueError):
    """Coils, sensors or bars overlap or are out of order."""


class InvalidParameterError(TwinTestError, ValueError):
    """A physical quantity is out of its admissible range."""


class LengthMismatchError(InvalidParameterError):
    pass


class NegativePowerError(InvalidParameterError):
    pass


class TelemetryParseError(TwinTestError, ValueError):
    """A telemetry line could not be turned into a record.

    ``kind`` is one of ``malformed-line``, ``unknown-tag``,
    ``non-finite-value`` or ``missing-field``.
    """

    def __init__(self, kind, message, line_number=None):
        self.kind = kind
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{prefix}{kind}: {message}")


class IncompleteSnapshotError(TwinTestError, ValueError):
    pass


class InconsistentPositionsError(TwinTestError, ValueError):
    pass


class EmptyHistogramError(TwinTestError, ValueError):
    pass


class IncompatibleBinningError(TwinTestError, ValueError):
    pass


class ReversedIntervalError(TwinTestError, ValueError):
    pass


class InvalidScheduleError(TwinTestError, ValueError):
    pass
