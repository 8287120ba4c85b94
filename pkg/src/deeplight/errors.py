"""Exceptions shared across modules; the CLI maps these to exit codes."""


class ConfigError(ValueError):
    """Invalid configuration value; message names the offending field."""


class DataError(ValueError):
    """Input data violates a contract (wrong values, bad splits, ...)."""


class FormatError(ValueError):
    """Malformed binary file. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
