"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors -> 1, data/validation
errors -> 2, I/O failures -> 3.
"""

from __future__ import annotations


class TmimiError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(TmimiError, ValueError):
    """Operand shapes are inconsistent."""


class ValidationError(TmimiError, ValueError):
    """A value, config, or plan violates its invariants."""


class WeightFileError(TmimiError):
    """Base class for weight/frames container failures."""


class BadMagicError(WeightFileError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(WeightFileError):
    """Container format version is not supported by this build."""


class ChecksumError(WeightFileError):
    """Trailing CRC32 does not match the file contents."""


class TruncatedFileError(WeightFileError):
    """File ends before the declared payload does."""


class FormatError(WeightFileError):
    """Structurally invalid container (bad counts, shapes, or dtypes)."""
