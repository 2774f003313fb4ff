"""Exception hierarchy shared by every module."""


class LidarMosError(Exception):
    """Base class for all errors raised by this package."""


class IoError(LidarMosError, OSError):
    """A file is missing or unreadable."""


class FormatError(LidarMosError, ValueError):
    """A file or container does not match its expected layout."""


class MathError(LidarMosError, ArithmeticError):
    """A matrix that must be invertible is not."""


class DegenerateInputError(LidarMosError, ValueError):
    """Input is geometrically degenerate (e.g. a zero-range point)."""


class ConfigError(LidarMosError, ValueError):
    """A configuration value violates its invariants."""


class OrderError(LidarMosError, ValueError):
    """Frames were pushed out of temporal order."""


class ShapeError(LidarMosError, ValueError):
    """Array shapes disagree."""


class CrossViewIndexError(LidarMosError, IndexError):
    """An index matrix references an entry beyond its partner's length."""


class AlignmentError(LidarMosError, ValueError):
    """Voxel occupancy does not belong to the given cloud."""
