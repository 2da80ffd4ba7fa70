"""Shared exception types."""


class DimensionError(ValueError):
    """Shapes or axis sizes are incompatible with the requested operation."""


class ParameterError(ValueError):
    """A parameter value is outside its documented domain."""


class ContractError(RuntimeError):
    """An API contract was violated (e.g. backward on a non-scalar loss)."""


class FileFormatError(IOError):
    """Base class for structured binary file problems."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class BadVersionError(FileFormatError):
    """File carries an unsupported format version."""


class TruncatedFileError(FileFormatError):
    """File ends before the payload its header promises."""


class UndefinedCorrelationError(ValueError):
    """Correlation is undefined because one series has zero variance."""
