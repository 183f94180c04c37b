"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, data errors -> 2,
everything else that escapes -> 3.
"""


class DqadError(Exception):
    """Base class for all package errors."""


class ConfigError(DqadError):
    """Invalid or inconsistent configuration."""


class InputError(DqadError, ValueError):
    """An argument violates an operation's preconditions."""


class StateError(DqadError, RuntimeError):
    """An object is not in a state that allows the requested operation."""


class NumericError(DqadError, ArithmeticError):
    """A computation produced non-finite values."""


class DataError(DqadError):
    """A dataset or file on disk is invalid."""


class ParseError(DataError):
    """A binary file failed to parse; carries the path and byte offset."""

    def __init__(self, path, offset, message):
        super().__init__(f"{path} (offset {offset}): {message}")
        self.path = str(path)
        self.offset = offset


class UndefinedMetricError(DqadError):
    """The requested metric is undefined for the given labels."""
