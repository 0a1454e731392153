"""Exception hierarchy shared across the toolkit.

The CLI maps these onto stable exit codes: data errors exit 1, usage
errors exit 2, numeric failures exit 3.
"""


class RetforgeError(Exception):
    """Base class for all toolkit errors."""


class UsageError(RetforgeError):
    """Invalid flags or arguments supplied by the caller."""


class DataError(RetforgeError):
    """Input files or corpus contents are malformed or inconsistent."""


class FormatError(DataError):
    """A file does not match its declared binary or text format."""


class SizeMismatchError(FormatError):
    """A file is truncated or carries a payload of the wrong byte length."""


class DataIntegrityError(DataError):
    """Stored values violate an integrity rule (e.g. non-finite entries)."""


class UnknownDocumentError(DataError, KeyError):
    """A document id is not present in the index."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class NumericError(RetforgeError):
    """A numeric operation failed (non-finite loss, impossible normalization)."""


class NormalizationError(NumericError):
    """A vector with (near-)zero norm cannot be scaled to unit length."""


class StateError(RetforgeError):
    """An operation was called out of order (e.g. backward before forward)."""
