"""Exception types shared across the package."""


class DataError(ValueError):
    """Problem with input data: file format, parse failure, shape mismatch,
    missing labels, or values outside the accepted domain."""


class ModelFormatError(RuntimeError):
    """Model file is corrupt, truncated, or carries an unsupported format version."""
