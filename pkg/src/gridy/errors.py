"""Exception hierarchy shared by all stages.

The CLI maps :class:`ConfigError` to exit code 2 and
:class:`NumericalError` to exit code 3.
"""


class GridyError(Exception):
    """Base class for all package errors."""


class ConfigError(GridyError, ValueError):
    """Bad input: malformed manifest, invalid option, violated precondition."""


class DataError(ConfigError):
    """Ingestion failure (non-numeric cell, shape mismatch, bad group label)."""


class NumericalError(GridyError, ArithmeticError):
    """A numerical routine could not produce a finite, well-defined answer."""


class StageError(GridyError):
    """Failure inside one pipeline stage; wraps the original error."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")

    @property
    def exit_code(self):
        return 3 if isinstance(self.cause, NumericalError) else 2
