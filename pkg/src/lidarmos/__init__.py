"""Cross-view LiDAR moving-object segmentation data pipeline: range and polar
BEV projections, temporal residuals, cross-view index maps and fusion
primitives, sparse voxel attention, losses, metrics and synthetic scenes."""

from ._kernels import backend
from .errors import (AlignmentError, ConfigError, CrossViewIndexError, DegenerateInputError, FormatError,
                     IoError, LidarMosError, MathError, OrderError, ShapeError)
from .scan_io import LabelSet, PointCloud, Pose, ScanFrame

__version__ = "0.1.0"

__all__ = [
    "backend", "AlignmentError", "ConfigError", "CrossViewIndexError", "DegenerateInputError",
    "FormatError", "IoError", "LidarMosError", "MathError", "OrderError", "ShapeError",
    "LabelSet", "PointCloud", "Pose", "ScanFrame", "__version__",
]
