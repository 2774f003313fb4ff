"""Spherical range-image projection, the pixel -> point index map and
range residual maps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._kernels import backend
from .errors import ConfigError, DegenerateInputError
from .scan_io import PointCloud, ScanFrame, relative_transform

log = logging.getLogger(__name__)

SENTINEL = -1.0
CHANNELS = ("x", "y", "z", "range", "intensity")


@dataclass(frozen=True)
class RvConfig:
    """Range image geometry. ``fov_up``/``fov_down`` are magnitudes in radians
    above/below the horizon, so the total vertical field is their sum."""

    h: int = 64
    w: int = 2048
    fov_up: float = math.radians(3.0)
    fov_down: float = math.radians(25.0)

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ConfigError("range image dimensions must be >= 1")
        if not self.fov_up + self.fov_down > 0:
            raise ConfigError("vertical field of view must be positive")

    @property
    def fov(self) -> float:
        return self.fov_up + self.fov_down


@dataclass(frozen=True)
class ProjectionStats:
    n_points: int
    n_zero_range: int
    n_out_of_fov: int
    n_pixels_filled: int


@dataclass(frozen=True)
class RangeImage:
    """``h x w x 5`` array of ``(x, y, z, r, e)``; empty pixels hold -1 everywhere."""

    channels: np.ndarray

    @property
    def range(self) -> np.ndarray:
        return self.channels[..., 3]

    @property
    def valid(self) -> np.ndarray:
        return self.channels[..., 3] > 0


@dataclass(frozen=True)
class RangeIndexMap:
    """``h x w`` point index per pixel, -1 where no point landed."""

    idx: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.idx >= 0


def project_to_uv(point, cfg: RvConfig = RvConfig()) -> tuple[int, int] | None:
    """Pixel ``(u, v)`` (column, row) of one point, or ``None`` outside the
    vertical field of view. The column is clamped into ``[0, w-1]``."""
    x, y, z = float(point[0]), float(point[1]), float(point[2])
    r = math.sqrt(x * x + y * y + z * z)
    if not r > 0.0:
        raise DegenerateInputError("cannot project a zero-range point")
    v = math.floor((1.0 - (math.asin(z / r) + cfg.fov_down) / cfg.fov) * cfg.h)
    if v < 0 or v >= cfg.h:
        return None
    u = math.floor(0.5 * (1.0 - math.atan2(y, x) / math.pi) * cfg.w)
    return min(max(u, 0), cfg.w - 1), v


def project_points(cloud: PointCloud, cfg: RvConfig = RvConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``project_to_uv``; absent points get ``(-1, -1)``."""
    return backend.project_range(cloud.points, cfg.h, cfg.w, cfg.fov_up, cfg.fov_down)


def build_range_image(
    cloud: PointCloud, cfg: RvConfig = RvConfig(), *, with_stats: bool = False
):
    """Project ``cloud``; on pixel collisions the smaller range wins (ties go to
    the lower point index).

    Returns ``(RangeImage, RangeIndexMap)``, plus a :class:`ProjectionStats`
    when ``with_stats`` is set.
    """
    idx, rng = backend.range_index(cloud.points, cfg.h, cfg.w, cfg.fov_up, cfg.fov_down)
    # index -1 lands on the appended sentinel row
    table = np.full((len(cloud) + 1, 4), SENTINEL)
    table[:-1] = cloud.points
    looked = np.take(table, idx, axis=0)
    img = np.empty((cfg.h, cfg.w, 5))
    img[..., :3] = looked[..., :3]
    img[..., 3] = rng
    img[..., 4] = looked[..., 3]
    filled = idx >= 0
    ri, rm = RangeImage(img), RangeIndexMap(idx)
    if not with_stats:
        return ri, rm
    r = cloud.ranges
    n_zero = int(np.count_nonzero(r == 0))
    if n_zero:
        log.warning("skipped %d zero-range points", n_zero)
    u, _ = project_points(cloud, cfg)
    n_out = int(np.count_nonzero(u < 0)) - n_zero
    stats = ProjectionStats(len(cloud), n_zero, n_out, int(filled.sum()))
    return ri, rm, stats


@dataclass(frozen=True)
class RvResidualMap:
    """``h x w x k`` normalised range differences, one channel per past frame."""

    values: np.ndarray


def residual_from_ranges(r0: np.ndarray, rk: np.ndarray) -> np.ndarray:
    """``|rk - r0| / r0`` where both pixels are valid, else 0."""
    ok = (r0 > 0) & (rk > 0)
    out = np.zeros(r0.shape)
    out[ok] = np.abs(rk[ok] - r0[ok]) / r0[ok]
    return out


def build_rv_residual(
    current: ScanFrame, past: Sequence[ScanFrame], cfg: RvConfig = RvConfig(),
    *, current_image: RangeImage | None = None,
) -> RvResidualMap:
    """Residual channels of ``current`` against each frame in ``past`` after
    compensating it into the current sensor frame. Channel order follows
    ``past``."""
    if not past:
        raise ConfigError("residual needs at least one past frame")
    if current_image is None:
        current_image, _ = build_range_image(current.cloud, cfg)
    r0 = current_image.range
    out = np.zeros((cfg.h, cfg.w, len(past)))
    for k, frame in enumerate(past):
        out[..., k] = residual_from_ranges(r0, compensated_ranges(frame, current, cfg))
    return RvResidualMap(out)


def compensated_ranges(frame: ScanFrame, target: ScanFrame, cfg: RvConfig = RvConfig()) -> np.ndarray:
    """Range channel of ``frame`` re-projected in ``target``'s sensor frame
    (-1 where empty). The rigid transform is applied inside the kernel."""
    if np.array_equal(frame.pose.transform, target.pose.transform):
        rel = None
    else:
        rel = relative_transform(frame.pose, target.pose)
    _, rng = backend.range_index(frame.cloud.points, cfg.h, cfg.w, cfg.fov_up, cfg.fov_down, rel)
    return rng


def sample_delta_t(rng: np.random.Generator, stride_options: Sequence[int]) -> int:
    """Draw one frame stride uniformly from ``stride_options``."""
    if len(stride_options) == 0:
        raise ConfigError("stride options must be non-empty")
    if any(int(s) < 1 for s in stride_options):
        raise ConfigError("strides must be positive")
    return int(stride_options[int(rng.integers(len(stride_options)))])


def past_indices(current_index: int, n_past: int, stride: int) -> list[int]:
    """Frame numbers ``current - stride * k`` for ``k = 1..n_past``, clipped at 0."""
    if n_past < 1 or stride < 1:
        raise ConfigError("n_past and stride must be >= 1")
    return [max(current_index - stride * k, 0) for k in range(1, n_past + 1)]
