"""Exception hierarchy shared across the codec.

The CLI maps these onto exit codes: parameter/usage problems exit 2,
data and format problems exit 3, model mismatches exit 4.
"""


class TritcodecError(Exception):
    """Base class for all codec errors."""


class ParameterError(TritcodecError, ValueError):
    """An argument violates a documented precondition."""


class DataError(TritcodecError):
    """Input data is malformed or inconsistent."""


class ParseError(DataError):
    """A serialized container or model blob failed to parse."""


class DecodeError(DataError):
    """The entropy decoder lost synchronization or hit corruption."""


class ModelMismatchError(TritcodecError):
    """Supplied models do not match the checksum recorded in a stream."""
