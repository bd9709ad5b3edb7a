"""Exception types shared across the toolkit.

The CLI maps these onto process exit codes: usage errors exit 1, DataError
exits 2 and NumericError exits 3.
"""


class RgbnError(Exception):
    """Base class for toolkit errors."""

    exit_code = 1


class DataError(RgbnError):
    """Bad input data: unreadable files, mismatched dimensions, invalid manifests."""

    exit_code = 2


class ArchiveFormatError(DataError):
    """Weight archive violates the on-disk format (magic, truncation, duplicates)."""


class NumericError(RgbnError):
    """Numeric failure: gradient check above tolerance, non-finite loss."""

    exit_code = 3
