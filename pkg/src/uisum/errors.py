"""Exception hierarchy.

The CLI maps these onto exit codes: configuration problems exit 1, bad or
missing data exits 2, numeric faults (NaN/Inf during model computation)
exit 3.
"""


class UisumError(Exception):
    exit_code = 2


class ConfigError(UisumError, ValueError):
    exit_code = 1


class DataError(UisumError):
    exit_code = 2


class ParseError(DataError):
    """Malformed JSON; ``offset`` is the byte offset of the failure."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class SchemaError(DataError):
    """A structurally valid document that violates the expected schema."""

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{message} at {path}")
        self.path = path


class SplitError(DataError):
    pass


class FormatError(DataError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class FeaturizationError(DataError):
    pass


class CoverageError(DataError):
    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class RetrievalError(DataError):
    pass


class CheckpointError(DataError):
    pass


class LengthError(UisumError, ValueError):
    exit_code = 2


class NumericFault(UisumError, FloatingPointError):
    exit_code = 3
