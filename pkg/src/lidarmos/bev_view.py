"""Polar bird's-eye-view images, the point -> cell index map and the sliding
two-window BEV residual."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._kernels import backend
from .errors import ConfigError, OrderError
from .scan_io import PointCloud, Pose, ScanFrame, relative_transform


@dataclass(frozen=True)
class BevConfig:
    """Polar grid: ``h`` angular bins over ``[theta_min, theta_max)`` and ``w``
    radial bins over ``[rho_min, rho_max)``; heights kept strictly inside
    ``(z_min, z_max)``; ``window_len`` frames split into two halves."""

    h: int = 360
    w: int = 480
    rho_min: float = 0.0
    rho_max: float = 50.0
    theta_min: float = -math.pi
    theta_max: float = math.pi
    z_min: float = -4.0
    z_max: float = 2.0
    window_len: int = 8

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ConfigError("BEV dimensions must be >= 1")
        if not (self.rho_max > self.rho_min >= 0):
            raise ConfigError("need rho_max > rho_min >= 0")
        if not self.theta_max > self.theta_min:
            raise ConfigError("need theta_max > theta_min")
        if not self.z_max > self.z_min:
            raise ConfigError("need z_max > z_min")
        if self.window_len < 2 or self.window_len % 2:
            raise ConfigError("window_len must be even and >= 2")

    @property
    def half(self) -> int:
        return self.window_len // 2

    @property
    def z_extent(self) -> float:
        return self.z_max - self.z_min

    def _grid_args(self):
        return (self.h, self.w, self.rho_min, self.rho_max, self.theta_min, self.theta_max)


@dataclass(frozen=True)
class PolarPoint:
    rho: float
    theta: float
    z: float


def to_polar(point) -> PolarPoint:
    x, y, z = float(point[0]), float(point[1]), float(point[2])
    return PolarPoint(math.sqrt(x * x + y * y), math.atan2(y, x), z)


def assign_grid(p: PolarPoint, cfg: BevConfig = BevConfig()) -> tuple[int, int] | None:
    """``(radial bin, angular bin)`` of a polar point, ``None`` outside the grid."""
    if not (cfg.rho_min <= p.rho < cfg.rho_max and cfg.theta_min <= p.theta < cfg.theta_max):
        return None
    x = math.floor((p.rho - cfg.rho_min) * cfg.w / (cfg.rho_max - cfg.rho_min))
    y = math.floor((p.theta - cfg.theta_min) * cfg.h / (cfg.theta_max - cfg.theta_min))
    return min(x, cfg.w - 1), min(y, cfg.h - 1)


@dataclass(frozen=True)
class BevIndexMap:
    """``N x 2`` cell per point as ``(radial, angular)``; ``(-1, -1)`` outside."""

    coords: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.coords[:, 0] >= 0


def build_t_p2b(cloud: PointCloud, cfg: BevConfig = BevConfig()) -> BevIndexMap:
    return BevIndexMap(backend.bev_assign(cloud.points, *cfg._grid_args()))


@dataclass(frozen=True)
class BevImage:
    """``h x w`` height span (max z - min z) per cell; empty cells hold 0."""

    span: np.ndarray
    occupied: np.ndarray


def _finish(lohi: np.ndarray) -> BevImage:
    lo, hi = lohi[..., 0], lohi[..., 1]
    occupied = hi >= lo
    return BevImage(np.where(occupied, hi - lo, 0.0), occupied)


def _accumulate(frames: Sequence[ScanFrame], target_pose: Pose, cfg: BevConfig,
                snapshot_first: bool = False):
    """Pooled image; with ``snapshot_first`` also the image of ``frames[0]`` alone
    (min/max pooling is order independent, so nothing is recomputed)."""
    lohi = backend.new_accumulator(cfg.h, cfg.w)
    first = None
    for i, f in enumerate(frames):
        if np.array_equal(f.pose.transform, target_pose.transform):
            rel = None
        else:
            rel = relative_transform(f.pose, target_pose)
        backend.bev_accumulate(
            f.cloud.points, rel, lohi,
            cfg.rho_min, cfg.rho_max, cfg.theta_min, cfg.theta_max, cfg.z_min, cfg.z_max,
        )
        if snapshot_first and i == 0:
            first = _finish(lohi)
    return (_finish(lohi), first) if snapshot_first else _finish(lohi)


def build_bev_image(frames: Sequence[ScanFrame], target_pose: Pose,
                    cfg: BevConfig = BevConfig()) -> BevImage:
    """Pool ``frames`` in the ``target_pose`` sensor frame and take the height
    span per polar cell."""
    if not frames:
        raise ConfigError("BEV image needs at least one frame")
    return _accumulate(frames, target_pose, cfg)


@dataclass(frozen=True)
class BevResidualMap:
    """``h x w x N`` signed window differences; see :func:`push_frame_and_residual`."""

    channels: np.ndarray


@dataclass
class TemporalWindowPair:
    """Two adjacent windows of ``N/2`` frames; ``q1`` holds the newer half.

    ``residual`` is the shift register the streaming update writes into.
    """

    cfg: BevConfig = field(default_factory=BevConfig)
    q1: deque = field(init=False)
    q2: deque = field(init=False)
    residual: np.ndarray = field(init=False)
    last_index: int | None = field(default=None, init=False)
    current_image: BevImage | None = field(default=None, init=False)

    def __post_init__(self):
        self.q1 = deque(maxlen=self.cfg.half)
        self.q2 = deque(maxlen=self.cfg.half)
        self.residual = np.zeros((self.cfg.h, self.cfg.w, self.cfg.window_len))

    def push(self, frame: ScanFrame) -> None:
        if self.last_index is not None and frame.index <= self.last_index:
            raise OrderError(
                f"frame {frame.index} is not newer than buffered frame {self.last_index}"
            )
        if len(self.q1) == self.q1.maxlen:
            # deque(maxlen) drops the oldest of q2 on append
            self.q2.append(self.q1.popleft())
        self.q1.append(frame)
        self.last_index = frame.index


def window_difference(q1: Sequence[ScanFrame], q2: Sequence[ScanFrame], pose: Pose,
                      cfg: BevConfig) -> np.ndarray:
    """``I1 - I2`` in ``pose``'s frame; zero while the older window is empty."""
    if not q1 or not q2:
        return np.zeros((cfg.h, cfg.w))
    i1 = build_bev_image(q1, pose, cfg).span
    i2 = build_bev_image(q2, pose, cfg).span
    return i1 - i2


def _write_channels(channels: np.ndarray, d: np.ndarray, half: int) -> None:
    channels[..., 1:] = channels[..., :-1].copy()
    channels[..., 0] = d
    channels[..., half] = 0.0 - d


def push_frame_and_residual(state: TemporalWindowPair, frame: ScanFrame,
                            cfg: BevConfig | None = None) -> BevResidualMap:
    """Slide both windows by ``frame`` and update the residual register.

    Every channel shifts up by one, then channel 0 receives ``I1 - I2`` and
    channel ``N/2`` its negation. ``state.current_image`` is left holding the
    BEV image of ``frame`` alone.
    """
    cfg = state.cfg if cfg is None else cfg
    if cfg != state.cfg:
        raise ConfigError("config does not match the window state")
    state.push(frame)
    # newest first so the current frame's own image falls out of the same pass
    i1, state.current_image = _accumulate(list(reversed(state.q1)), frame.pose, cfg, snapshot_first=True)
    if state.q2:
        d = i1.span - build_bev_image(list(state.q2), frame.pose, cfg).span
    else:
        d = np.zeros((cfg.h, cfg.w))
    _write_channels(state.residual, d, cfg.half)
    return BevResidualMap(state.residual.copy())


def bev_residual_stateless(frames: Sequence[ScanFrame], cfg: BevConfig = BevConfig()) -> BevResidualMap:
    """Recompute the residual register after streaming ``frames`` (oldest
    first) from scratch, without any carried state.

    Channel ``k < N/2`` is the window difference at step ``t-k``, and channel
    ``N/2 + k`` its negation; only the last ``N + N/2 - 1`` frames matter.
    """
    half = cfg.half
    t = len(frames) - 1
    out = np.zeros((cfg.h, cfg.w, cfg.window_len))
    for step in range(max(0, t - half + 1), t + 1):
        # windows as they stood after frame ``step`` arrived
        q1 = frames[max(0, step - half + 1): step + 1]
        q2 = frames[max(0, step - 2 * half + 1): max(0, step - half + 1)]
        d = window_difference(q1, q2, frames[step].pose, cfg)
        k = t - step
        out[..., k] = d
        out[..., half + k] = 0.0 - d
    return BevResidualMap(out)
