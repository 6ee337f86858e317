"""Exception hierarchy shared by every module of the package."""


class QkdError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(QkdError, ValueError):
    """A physical or configuration parameter is outside its allowed range."""


class UndefinedQberError(QkdError, ZeroDivisionError):
    """QBER requested where the gain is zero."""


class InvalidBudgetError(QkdError, ValueError):
    pass


class InvalidBlockError(QkdError, ValueError):
    """Block length does not match the code or hash dimensions."""


class InvalidRateError(QkdError, ValueError):
    pass


class InvalidInputError(QkdError, ValueError):
    pass


class InvalidDecoyConfigurationError(QkdError, ValueError):
    pass


class UnboundedErrorSignal(QkdError):
    """The single-photon error rate cannot be bounded because Y1_L is zero."""


class InsufficientDataError(QkdError, ValueError):
    def __init__(self, cls_name: str, message: str | None = None):
        self.cls_name = cls_name
        super().__init__(message or f"insufficient data: no pulses sent in class {cls_name!r}")


class ProtocolError(QkdError):
    """Malformed or unknown message on the classical channel."""


class FramingError(ProtocolError):
    """Truncated or inconsistent length-prefixed message."""


class ProtocolViolationError(QkdError):
    """A message or local event arrived in a phase where it is not legal."""

    def __init__(self, message: str, expected_phase: str | None = None):
        self.expected_phase = expected_phase
        super().__init__(message)


class ConfigParseError(QkdError, ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


class ValidationError(QkdError, ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DecodeBudgetExceeded(QkdError):
    """More reconciliation blocks failed than the session allows."""
