"""Exception types raised throughout the GMS library."""

from __future__ import annotations


class GmsError(Exception):
    """Base class of all errors raised by GMS."""


class DimensionError(GmsError, ValueError):
    """Raised when tensor shapes are incompatible."""


class ConfigurationError(GmsError, ValueError):
    """Raised when a configuration value cannot be realized (e.g. a non-integer output size)."""


class ValidationError(GmsError, ValueError):
    """Raised when input values violate a documented range or domain."""


class UsageError(GmsError, ValueError):
    """Raised when an API is called in a way its contract does not allow."""


class ParseError(GmsError, ValueError):
    """Raised when a file cannot be parsed."""

    def __init__(self, msg: str, offset: int | None = None) -> None:
        """Create a parse error.

        Args:
            msg: Description of the problem.
            offset: Byte offset into the file at which the problem was detected, if known.
        """
        if offset is not None:
            msg = f"{msg} (at byte offset {offset})"
        super().__init__(msg)
        self.offset = offset


class ArchiveFormatError(GmsError, ValueError):
    """Raised when a file is not a GMS archive."""


class ArchiveVersionError(GmsError, ValueError):
    """Raised when an archive was written by a newer format version."""


class ArchiveCorruptionError(GmsError, ValueError):
    """Raised when an archive header or payload is inconsistent."""


class GraphStateError(GmsError, RuntimeError):
    """Raised when a computation graph is used after it has been consumed."""


class ContractError(GmsError, RuntimeError):
    """Raised when a frozen-tokenizer or checkpoint contract is broken."""


class DivergenceError(GmsError, RuntimeError):
    """Raised when training produces a non-finite loss."""
