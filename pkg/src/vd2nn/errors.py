"""Exception hierarchy shared by the library and the command line."""


class VD2NNError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(VD2NNError):
    exit_code = 2


class RegimeError(ConfigError):
    """Geometry or displacement range outside the supported numerical regime.

    Raised both at config validation (axial range too large for the layer
    spacing) and from the forward model when a displaced layer would cross
    its neighbour.
    """

    exit_code = 5


class DataError(VD2NNError):
    exit_code = 3


class WrongMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


class CheckpointError(VD2NNError):
    exit_code = 4


class ChecksumError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class GridMismatchError(VD2NNError, ValueError):
    pass


class ShiftRangeError(VD2NNError, ValueError):
    """Lateral shift too large for the circular-shift model on this grid."""

    exit_code = 5
