"""Exception families shared across the package.

The CLI maps each family onto a distinct exit code, so new errors should
subclass one of these rather than raising bare ValueError/RuntimeError.
"""


class LegoError(Exception):
    """Base class for all package errors."""


class IoError(LegoError):
    """A file could not be read or written."""


class FormatError(LegoError):
    """A file is not in the expected binary/CSV format (bad magic, version,
    truncation, malformed header)."""


class ValidationError(LegoError):
    """Well-formed input that breaches a data invariant (duplicate id,
    non-finite component, out-of-range label, inconsistent state)."""


class ConfigError(LegoError):
    """A configuration value is out of its legal range."""


class DimensionError(LegoError):
    """Vector/matrix shapes do not match."""


class UnknownIdError(LegoError):
    """An unlearning request names an id that is not in the retained set."""


class DigestMismatchError(LegoError):
    """A checkpoint's content digest does not verify."""


class EmptySetError(LegoError):
    """An operation that needs a non-empty dataset got an empty one."""
