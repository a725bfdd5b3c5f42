"""Exception types raised by circle-qka.

They subclass the builtin ``ValueError``/``RuntimeError`` so callers that only
know the builtins (and the CLI's exit-code mapping) keep working.
"""

from typing import Optional


class QKAError(Exception):
    """Base class for all circle-qka errors."""


class RejectedInputError(QKAError, ValueError):
    """An operation was called with arguments outside its contract.

    ``field`` names the offending parameter when one is to blame.
    """

    def __init__(self, message: str = "", field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class UndefinedFormulaError(QKAError, ValueError):
    """No closed-form expression exists for the requested quantity."""


class ConsistencyError(QKAError, RuntimeError):
    """Simulator bookkeeping went wrong. Indicates a bug, never an attack."""


class ConfigError(RejectedInputError):
    """A configuration document or flag could not be accepted."""

    def __init__(
        self,
        message: str,
        key: Optional[str] = None,
        path: Optional[str] = None,
        line: Optional[int] = None,
    ):
        self.message = message
        self.key = key
        self.path = path
        self.line = line
        super().__init__(str(self))

    def __str__(self) -> str:
        where = ""
        if self.path is not None:
            where = f"{self.path}:{self.line}: " if self.line else f"{self.path}: "
        key = f"{self.key}: " if self.key else ""
        return f"{where}{key}{self.message}"
