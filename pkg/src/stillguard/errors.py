"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes; see cli.EXIT_CODES.
"""


class DimensionError(ValueError):
    """Operand shapes are incompatible. Messages name both shapes."""


class DomainError(ValueError):
    """Values outside their legal domain (pixels beyond [0,1], non-finite input)."""


class ConfigError(ValueError):
    """Invalid configuration: bad hyperparameter ranges, unknown config keys."""


class UsageError(ValueError):
    """An operation was called in a way its contract forbids."""


class ParseError(ValueError):
    """Malformed file content. `offset` is the byte position when known."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class MissingCheckpointError(FileNotFoundError):
    """A required trained checkpoint is absent."""


class NumericError(ArithmeticError):
    """Non-finite value where a finite one is required (e.g. a NaN loss)."""
