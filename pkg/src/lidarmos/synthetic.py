"""Deterministic synthetic dynamic scenes with exact moving/static labels.

Static surfaces (ground plane, boxes) and mover surfaces are sampled once in
world/body coordinates from the seed; each frame moves the movers, expresses
everything in the ego sensor frame and leaves occlusion to the range
projection's nearest-wins rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegenerateInputError
from .scan_io import (LabelSet, PointCloud, Pose, ScanFrame, SequencePaths, apply_transform,
                      write_calib, write_labels, write_point_cloud, write_poses)

GROUND_CLASS = 40
STATIC_CLASS = 50
MOVING_CLASS = 252
SENSOR_HEIGHT = 1.73


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    size: tuple[float, float, float]


@dataclass(frozen=True)
class Mover:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    velocity: tuple[float, float, float]


def default_mover() -> Mover:
    """4 x 2 x 1.5 m box centred 10 m ahead, resting on the ground, receding 1 m/frame."""
    return Mover((10.0, 0.0, -SENSOR_HEIGHT + 0.75), (4.0, 2.0, 1.5), (1.0, 0.0, 0.0))


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to regenerate a sequence bit-for-bit.

    Densities are points per square metre of surface. The ego starts at the
    identity pose and advances by ``ego_velocity`` (m/frame, world frame) while
    yawing ``ego_yaw_rate`` rad/frame.
    """

    frame_count: int = 10
    ground_extent: float = 60.0
    ground_z: float = -SENSOR_HEIGHT
    ground_density: float = 1.5
    static_boxes: tuple[Box, ...] = ()
    box_density: float = 20.0
    movers: tuple[Mover, ...] = ()
    mover_density: float = 200.0
    ego_velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ego_yaw_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.frame_count < 2:
            raise ConfigError("frame_count must be >= 2")
        if min(self.ground_density, self.box_density, self.mover_density) <= 0:
            raise ConfigError("densities must be positive")
        if self.ground_extent <= 0:
            raise ConfigError("ground_extent must be positive")

    def ego_pose(self, t: int) -> Pose:
        yaw = self.ego_yaw_rate * t
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Pose.from_rt(rot, np.asarray(self.ego_velocity, dtype=np.float64) * t)


@dataclass
class SyntheticSequence:
    frames: list[ScanFrame]
    spec: SceneSpec
    mover_ids: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)

    def write(self, root) -> SequencePaths:
        """Emit the KITTI layout (velodyne/, labels/, poses.txt, calib.txt)."""
        seq = SequencePaths(Path(root))
        seq.velodyne.mkdir(parents=True, exist_ok=True)
        seq.labels.mkdir(parents=True, exist_ok=True)
        for f in self.frames:
            write_point_cloud(seq.scan(f.index), f.cloud)
            write_labels(seq.label(f.index), f.labels)
        write_poses(seq.poses, [f.pose for f in self.frames])
        write_calib(seq.calib)
        return seq


def _sample_box_surface(rng: np.random.Generator, size, density: float,
                        skip_bottom: bool = True) -> np.ndarray:
    """Uniform samples on a box's faces, body-centred."""
    sx, sy, sz = (float(v) for v in size)
    hx, hy, hz = sx / 2, sy / 2, sz / 2
    # (fixed axis, fixed value, free axes, free extents)
    faces = [
        (0, hx, (1, 2), (sy, sz)), (0, -hx, (1, 2), (sy, sz)),
        (1, hy, (0, 2), (sx, sz)), (1, -hy, (0, 2), (sx, sz)),
        (2, hz, (0, 1), (sx, sy)),
    ]
    if not skip_bottom:
        faces.append((2, -hz, (0, 1), (sx, sy)))
    chunks = []
    for axis, value, free, extent in faces:
        n = max(1, int(round(extent[0] * extent[1] * density)))
        pts = np.empty((n, 3))
        pts[:, axis] = value
        pts[:, free[0]] = rng.uniform(-extent[0] / 2, extent[0] / 2, n)
        pts[:, free[1]] = rng.uniform(-extent[1] / 2, extent[1] / 2, n)
        chunks.append(pts)
    return np.concatenate(chunks)


def generate_sequence(spec: SceneSpec) -> SyntheticSequence:
    rng = np.random.default_rng(spec.seed)
    e = spec.ground_extent
    n_ground = max(1, int(round((2 * e) ** 2 * spec.ground_density)))
    ground = np.column_stack([rng.uniform(-e, e, n_ground), rng.uniform(-e, e, n_ground),
                              np.full(n_ground, spec.ground_z)])
    static = [ground]
    static_cls = [np.full(n_ground, GROUND_CLASS)]
    for box in spec.static_boxes:
        pts = _sample_box_surface(rng, box.size, spec.box_density) + np.asarray(box.center)
        static.append(pts)
        static_cls.append(np.full(len(pts), STATIC_CLASS))
    static_xyz = np.concatenate(static)
    static_cls = np.concatenate(static_cls)

    bodies = [_sample_box_surface(rng, m.size, spec.mover_density) for m in spec.movers]
    n_total = len(static_xyz) + sum(len(b) for b in bodies)
    intensity = rng.uniform(0.0, 1.0, n_total)

    cls = np.concatenate([static_cls] + [np.full(len(b), MOVING_CLASS) for b in bodies]).astype(np.uint16)
    inst = np.concatenate([np.zeros(len(static_xyz), np.uint16)]
                          + [np.full(len(b), i + 1, np.uint16) for i, b in enumerate(bodies)])
    labels = LabelSet.from_classes(cls, inst)

    frames = []
    for t in range(spec.frame_count):
        world = [static_xyz]
        for m, body in zip(spec.movers, bodies):
            world.append(body + (np.asarray(m.center) + np.asarray(m.velocity) * t))
        world = np.concatenate(world)
        pose = spec.ego_pose(t)
        sensor = apply_transform(world, pose.inverse().transform)
        frames.append(ScanFrame(PointCloud(np.column_stack([sensor, intensity])), pose, labels, t))
    return SyntheticSequence(frames, spec, [inst == i + 1 for i in range(len(bodies))])


def analytic_rv_residual(r0: float, r1: float) -> float:
    """Expected range residual for a surface seen at ``r0`` now and ``r1`` before."""
    if not r0 > 0:
        raise DegenerateInputError("reference range must be positive")
    return abs(r1 - r0) / r0


def static_scene(frame_count: int = 10, ego_speed: float = 0.5, seed: int = 0,
                 ground_density: float = 1.5, box_density: float = 20.0) -> SceneSpec:
    """Static world with a few buildings; ego drives forward at ``ego_speed`` m/frame."""
    boxes = (
        Box((15.0, 12.0, -SENSOR_HEIGHT + 4.0), (10.0, 6.0, 8.0)),
        Box((-10.0, -15.0, -SENSOR_HEIGHT + 3.0), (8.0, 8.0, 6.0)),
        Box((30.0, -10.0, -SENSOR_HEIGHT + 2.5), (6.0, 12.0, 5.0)),
        Box((-25.0, 20.0, -SENSOR_HEIGHT + 5.0), (12.0, 6.0, 10.0)),
    )
    return SceneSpec(frame_count=frame_count, static_boxes=boxes, ego_velocity=(ego_speed, 0.0, 0.0),
                     ground_density=ground_density, box_density=box_density, seed=seed)


def mover_scene(frame_count: int = 4, seed: int = 0, mover_density: float = 3000.0,
                movers: Sequence[Mover] | None = None) -> SceneSpec:
    """Static ego, static surroundings and the default receding box mover."""
    base = static_scene(frame_count, ego_speed=0.0, seed=seed)
    return SceneSpec(frame_count=frame_count, static_boxes=base.static_boxes,
                     ground_density=base.ground_density, box_density=base.box_density,
                     movers=tuple(movers) if movers is not None else (default_mover(),),
                     mover_density=mover_density, seed=seed)
