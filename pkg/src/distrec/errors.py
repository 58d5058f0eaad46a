"""Exception types shared across the package.

The CLI maps ConfigError/DataError subclasses to exit code 2 and
NumericError to exit code 3; everything else is a genuine bug.
"""


class DistrecError(Exception):
    pass


class ConfigError(DistrecError):
    """Invalid configuration value or inconsistent option combination."""


class DataError(DistrecError):
    """Problem with an input dataset or embedding table."""


class ParseError(DataError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class EmptyDatasetError(DataError):
    pass


class MagicError(DataError):
    """File does not start with the expected magic string."""


class VersionError(DataError):
    """Unsupported serialization format version."""


class TruncatedError(DataError):
    """File ended before the declared payload was complete."""


class NonFiniteError(DataError):
    """An input table contains NaN or infinite entries."""


class InvalidShapeError(DistrecError):
    """Operands have incompatible dimensions."""


class NumericError(DistrecError):
    """Non-finite value produced during computation."""
