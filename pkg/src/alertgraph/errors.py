"""Exception types shared across the engine."""


class AlertGraphError(Exception):
    """Base class for all engine errors."""


class SchemaError(AlertGraphError):
    """An input file violates its schema; carries the offending row when known."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ParseError(AlertGraphError):
    """A value could not be parsed (bad IP, bad timestamp, bad duration)."""


class ConfigError(AlertGraphError):
    """A configuration document is invalid."""


class InvalidWindow(AlertGraphError):
    """Source window exceeds target window."""


class NotGated(AlertGraphError):
    """TI lookup attempted for an entity type that is not TI-gated."""


class StoreUnavailable(AlertGraphError):
    """The correlation store cannot be opened or written."""


class CorruptStore(AlertGraphError):
    """The correlation store journal is structurally unreadable."""


class DanglingEndpoint(AlertGraphError):
    """A correlation references an alert id missing from the batch."""
