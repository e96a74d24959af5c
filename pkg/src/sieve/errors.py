"""Exception taxonomy. Exit codes are stable per error class:
1 config, 2 IO/format, 3 backend, 4 data.
"""

from __future__ import annotations


class SieveError(Exception):
    """Base class for engine errors."""

    exit_code = 1


class ConfigError(SieveError):
    """Invalid configuration value, unknown key, or unusable resource budget."""

    exit_code = 1


class ResourceError(ConfigError):
    """Memory budget too small for minimum viable working buffers."""


class IoError(SieveError):
    """File-level failure: unreadable path, malformed line, broken format."""

    exit_code = 2


class ParseError(IoError):
    """A line of a line-delimited file did not parse; names the line number."""


class ShardFormatError(IoError):
    """Embedding shard violates the binary layout (magic, version, truncation)."""


class BackendError(SieveError):
    """Caption/embedding provider failure."""

    exit_code = 3


class TransportError(BackendError):
    """Backend unreachable."""


class ProtocolError(BackendError):
    """Backend reachable but response malformed."""


class NotFoundError(BackendError):
    """Backend cannot resolve the requested image or precomputed key."""


class DataError(SieveError):
    """Value-domain violation: non-finite score, duplicate uid, conflict."""

    exit_code = 4


class DuplicateUidError(DataError):
    """The same uid appeared more than once where uniqueness is required."""


class ConflictError(DataError):
    """Two inputs disagree on the value of the same column for the same uid."""


class OrderError(DataError):
    """An input that must be uid-sorted is not."""


class DomainError(DataError):
    """Argument outside its documented domain (k, alpha, fractions, arity)."""
