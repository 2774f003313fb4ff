"""KITTI-odometry style scan, pose, calibration and label I/O plus ego-motion
compensation.

Scans are stored as little-endian float32 quadruples ``(x, y, z, e)`` with no
header. Poses are one row-major 3x4 matrix per text line, expressed in the
left-camera frame; ``Tr`` from ``calib.txt`` moves them into the sensor frame.
Labels are one little-endian uint32 per point: semantic class in the low 16
bits, instance id in the high 16 bits.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, IoError, MathError

log = logging.getLogger(__name__)

DEFAULT_MOVING_CLASSES = frozenset(range(252, 260))
RIGID_TOL = 1e-6


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    """``N x 4`` array of ``(x, y, z, e)`` in float64; row order is identity."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise FormatError(f"point array must be (N, 4), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise FormatError("point cloud contains non-finite values")
        object.__setattr__(self, "points", _readonly(pts))

    @classmethod
    def _wrap(cls, pts: np.ndarray) -> "PointCloud":
        # skips the defensive copy; caller hands over a fresh finite array
        obj = object.__new__(cls)
        object.__setattr__(obj, "points", _readonly(pts))
        return obj

    @classmethod
    def from_xyz(cls, xyz, intensity=None) -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        e = np.zeros(len(xyz)) if intensity is None else np.asarray(intensity, dtype=np.float64)
        return cls(np.column_stack([xyz, e]))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    @property
    def ranges(self) -> np.ndarray:
        return np.sqrt(np.einsum("ij,ij->i", self.xyz, self.xyz))


@dataclass(frozen=True)
class Pose:
    """Rigid 4x4 sensor-to-world transform."""

    transform: np.ndarray

    def __post_init__(self):
        m = np.array(self.transform, dtype=np.float64, copy=True)
        if m.shape == (3, 4):
            m = np.vstack([m, [0.0, 0.0, 0.0, 1.0]])
        if m.shape != (4, 4):
            raise FormatError(f"pose must be 4x4 or 3x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise FormatError("pose contains non-finite values")
        rot = m[:3, :3]
        if (
            np.abs(rot.T @ rot - np.eye(3)).max() > RIGID_TOL
            or abs(np.linalg.det(rot) - 1.0) > RIGID_TOL
            or not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0])
        ):
            raise MathError("pose is not a rigid transform")
        object.__setattr__(self, "transform", _readonly(m))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, rotation, translation) -> "Pose":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @classmethod
    def translation(cls, x: float, y: float = 0.0, z: float = 0.0) -> "Pose":
        return cls.from_rt(np.eye(3), [x, y, z])

    @property
    def rotation(self) -> np.ndarray:
        return self.transform[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.transform[:3, 3]

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose.from_rt(rt, -rt @ self.t)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.transform @ other.transform)


@dataclass(frozen=True)
class LabelSet:
    class_id: np.ndarray
    instance_id: np.ndarray
    moving: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.class_id, dtype=np.uint16).ravel().copy()
        i = np.asarray(self.instance_id, dtype=np.uint16).ravel().copy()
        m = np.asarray(self.moving, dtype=bool).ravel().copy()
        if not (len(c) == len(i) == len(m)):
            raise FormatError("label arrays differ in length")
        object.__setattr__(self, "class_id", _readonly(c))
        object.__setattr__(self, "instance_id", _readonly(i))
        object.__setattr__(self, "moving", _readonly(m))

    @classmethod
    def from_classes(cls, class_id, instance_id=None, moving_classes=DEFAULT_MOVING_CLASSES):
        c = np.asarray(class_id, dtype=np.uint16).ravel()
        i = np.zeros_like(c) if instance_id is None else instance_id
        return cls(c, i, moving_mask(c, moving_classes))

    @classmethod
    def empty(cls) -> "LabelSet":
        return cls(np.zeros(0, np.uint16), np.zeros(0, np.uint16), np.zeros(0, bool))

    def __len__(self) -> int:
        return len(self.class_id)

    def encode(self) -> np.ndarray:
        """Packed uint32 records, the on-disk representation."""
        return self.class_id.astype(np.uint32) | (self.instance_id.astype(np.uint32) << 16)


@dataclass(frozen=True)
class ScanFrame:
    cloud: PointCloud
    pose: Pose = field(default_factory=Pose.identity)
    labels: LabelSet | None = None
    index: int = 0

    def __post_init__(self):
        if self.index < 0:
            raise FormatError("frame index must be non-negative")
        if self.labels is not None and len(self.labels) != len(self.cloud):
            raise FormatError(
                f"label count {len(self.labels)} != point count {len(self.cloud)}"
            )


def moving_mask(class_id, moving_classes=DEFAULT_MOVING_CLASSES) -> np.ndarray:
    return np.isin(np.asarray(class_id), np.fromiter(moving_classes, dtype=np.int64))


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def read_point_cloud(path) -> PointCloud:
    raw = _read_bytes(path)
    if len(raw) % 16:
        raise FormatError(f"{path}: {len(raw)} bytes is not a multiple of 16")
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    if not np.all(np.isfinite(pts)):
        raise FormatError(f"{path}: non-finite point components")
    return PointCloud(pts.astype(np.float64))


def write_point_cloud(path, cloud: PointCloud) -> None:
    Path(path).write_bytes(cloud.points.astype("<f4").tobytes())


def read_labels(path, moving_classes=DEFAULT_MOVING_CLASSES) -> LabelSet:
    raw = _read_bytes(path)
    if len(raw) % 4:
        raise FormatError(f"{path}: {len(raw)} bytes is not a multiple of 4")
    rec = np.frombuffer(raw, dtype="<u4")
    cls = (rec & 0xFFFF).astype(np.uint16)
    inst = (rec >> 16).astype(np.uint16)
    return LabelSet(cls, inst, moving_mask(cls, moving_classes))


def write_labels(path, labels: LabelSet) -> None:
    Path(path).write_bytes(labels.encode().astype("<u4").tobytes())


def _parse_matrix_line(tokens: Sequence[str], where: str) -> np.ndarray:
    if len(tokens) != 12:
        raise FormatError(f"{where}: expected 12 values, got {len(tokens)}")
    try:
        vals = np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from exc
    return np.vstack([vals.reshape(3, 4), [0.0, 0.0, 0.0, 1.0]])


def read_calib(calib_path) -> np.ndarray:
    """Return the 4x4 ``Tr`` (sensor -> camera) matrix."""
    try:
        text = Path(calib_path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {calib_path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        key, sep, rest = line.partition(":")
        if sep and key.strip() == "Tr":
            return _parse_matrix_line(rest.split(), f"{calib_path}:{n}")
    raise FormatError(f"{calib_path}: no 'Tr:' line")


def _snap_rigid(m: np.ndarray) -> np.ndarray:
    # text poses carry ~7 significant digits; project back onto SO(3)
    rot = m[:3, :3]
    if np.abs(rot.T @ rot - np.eye(3)).max() <= RIGID_TOL:
        return m
    u, _, vt = np.linalg.svd(rot)
    fixed = m.copy()
    fixed[:3, :3] = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    return fixed


def read_poses(pose_path, calib_path) -> list[Pose]:
    tr = read_calib(calib_path)
    if abs(np.linalg.det(tr)) < 1e-12:
        raise MathError("calibration Tr is not invertible")
    tr_inv = np.linalg.inv(tr)
    try:
        lines = Path(pose_path).read_text().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {pose_path}: {exc}") from exc
    poses = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        cam = _parse_matrix_line(line.split(), f"{pose_path}:{n}")
        poses.append(Pose(_snap_rigid(tr_inv @ cam @ tr)))
    return poses


def format_matrix_line(m: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(m)[:3, :4].ravel())


def write_poses(path, poses: Iterable[Pose], tr: np.ndarray | None = None) -> None:
    """Write sensor-frame poses in camera-frame KITTI form (``Tr P Tr^-1``)."""
    tr = np.eye(4) if tr is None else np.asarray(tr, dtype=np.float64)
    tr_inv = np.linalg.inv(tr)
    lines = [format_matrix_line(tr @ p.transform @ tr_inv) for p in poses]
    Path(path).write_text("".join(line + "\n" for line in lines))


def write_calib(path, tr: np.ndarray | None = None) -> None:
    tr = np.eye(4) if tr is None else tr
    Path(path).write_text(f"Tr: {format_matrix_line(tr)}\n")


def relative_transform(pose_src: Pose, pose_dst: Pose) -> np.ndarray:
    """4x4 matrix taking coordinates in ``pose_src``'s frame into ``pose_dst``'s."""
    return pose_dst.inverse().transform @ pose_src.transform


def apply_transform(xyz: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``m[:3,:3] @ p + m[:3,3]`` per row, summed left to right.

    Spelled out elementwise (no BLAS) so every code path, compiled or not,
    rounds identically.
    """
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    out = np.empty((len(xyz), 3))
    for k in range(3):
        out[:, k] = m[k, 0] * x + m[k, 1] * y + m[k, 2] * z + m[k, 3]
    return out


def compensate(cloud: PointCloud, pose_src: Pose, pose_dst: Pose) -> PointCloud:
    """Re-express ``cloud`` (captured at ``pose_src``) in the frame of ``pose_dst``."""
    if np.array_equal(pose_src.transform, pose_dst.transform):
        return cloud
    rel = relative_transform(pose_src, pose_dst)
    if not np.all(np.isfinite(rel)):
        raise MathError("relative transform is not finite")
    out = np.empty_like(cloud.points)
    out[:, :3] = apply_transform(cloud.xyz, rel)
    out[:, 3] = cloud.intensity
    if not np.all(np.isfinite(out)):
        raise MathError("compensated cloud is not finite")
    return PointCloud._wrap(out)


@dataclass
class SequencePaths:
    """KITTI sequence layout: ``velodyne/*.bin``, ``labels/*.label``, ``poses.txt``, ``calib.txt``."""

    root: Path

    @property
    def velodyne(self) -> Path:
        return self.root / "velodyne"

    @property
    def labels(self) -> Path:
        return self.root / "labels"

    @property
    def poses(self) -> Path:
        return self.root / "poses.txt"

    @property
    def calib(self) -> Path:
        return self.root / "calib.txt"

    def scan(self, i: int) -> Path:
        return self.velodyne / f"{i:06d}.bin"

    def label(self, i: int) -> Path:
        return self.labels / f"{i:06d}.label"

    def scan_ids(self) -> list[int]:
        if not self.velodyne.is_dir():
            raise IoError(f"{self.velodyne} is not a directory")
        return sorted(int(p.stem) for p in self.velodyne.glob("*.bin"))


def load_frame(seq: SequencePaths, i: int, poses: Sequence[Pose],
               moving_classes=DEFAULT_MOVING_CLASSES) -> ScanFrame:
    cloud = read_point_cloud(seq.scan(i))
    labels = read_labels(seq.label(i), moving_classes) if seq.label(i).exists() else None
    if i >= len(poses):
        raise FormatError(f"no pose for frame {i}")
    return ScanFrame(cloud, poses[i], labels, i)


def load_sequence(root: str | os.PathLike, moving_classes=DEFAULT_MOVING_CLASSES) -> list[ScanFrame]:
    seq = SequencePaths(Path(root))
    poses = read_poses(seq.poses, seq.calib)
    return [load_frame(seq, i, poses, moving_classes) for i in seq.scan_ids()]
