"""Exception types raised by the DIAS library."""


class DiasError(Exception):
    """Base class for all DIAS errors."""


class UsageError(DiasError, ValueError):
    """Shape, argument or configuration violation."""


class CorpusFormatError(DiasError):
    """Malformed corpus manifest or blob."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (byte {position})"
        super().__init__(message)


class NonFiniteLossError(DiasError):
    """A loss term evaluated to NaN or infinity."""

    def __init__(self, term: str, value: float):
        self.term = term
        self.value = value
        super().__init__(f"Non-finite loss term '{term}': {value}")
