"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: usage/configuration problems exit 2,
data and shape problems exit 3, numeric failures exit 4.
"""


class VoxprofileError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(VoxprofileError):
    """Invalid configuration: bad hyperparameters, unresolvable presets."""


class ParseError(VoxprofileError):
    """Malformed text input (manifest or metadata CSV)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(VoxprofileError):
    """A domain invariant was violated (duplicate paths, bad labels...)."""


class DecodeError(VoxprofileError):
    """Audio container or codec not supported; message names the format."""


class DataError(VoxprofileError):
    """Data does not fit the requested operation (empty split, bad dims)."""


class ShapeError(VoxprofileError):
    """Tensor shapes do not agree; message lists both shapes."""


class NumericError(VoxprofileError):
    """Non-finite value encountered during training; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
