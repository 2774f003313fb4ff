"""Sparse-voxel spatial/channel attention refinement.

Per-point features are averaged into occupied voxels, rescored by two
submanifold sparse convolutions (3x3x3 spatial, 1x1x1 channel) squashed
through a sigmoid, scattered back to the points and classified together with
a per-point MLP branch.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import tensor_core as tc
from .errors import AlignmentError, ConfigError, ShapeError
from .scan_io import PointCloud

OFFSETS_3 = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)


@dataclass(frozen=True)
class VoxelConfig:
    voxel_size: tuple[float, float, float] = (0.2, 0.2, 0.2)
    bounds_min: tuple[float, float, float] = (-50.0, -50.0, -4.0)
    bounds_max: tuple[float, float, float] = (50.0, 50.0, 2.0)

    def __post_init__(self):
        vs = np.broadcast_to(np.asarray(self.voxel_size, dtype=np.float64), (3,))
        if np.any(vs <= 0):
            raise ConfigError("voxel_size must be positive")
        if np.any(np.asarray(self.bounds_max) <= np.asarray(self.bounds_min)):
            raise ConfigError("bounds_max must exceed bounds_min on every axis")
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in vs))

    @property
    def dims(self) -> np.ndarray:
        span = np.asarray(self.bounds_max) - np.asarray(self.bounds_min)
        return np.ceil(span / np.asarray(self.voxel_size)).astype(np.int64)


@dataclass(frozen=True)
class VoxelGrid:
    """Occupied voxels only.

    ``keys`` is ``M x 3`` voxel indices in lexicographic order, ``features`` is
    ``M x C``; ``point_voxel`` maps each source point to its row in ``keys``
    (``-1`` for points outside the bounds).
    """

    keys: np.ndarray
    features: np.ndarray
    point_voxel: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    def with_features(self, feats: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(self.keys, feats, self.point_voxel)

    def records(self):
        """``((i, j, k), feature)`` pairs, for debugging dumps."""
        for key, f in zip(self.keys, self.features):
            yield tuple(int(v) for v in key), f


def voxelize(cloud: PointCloud, feats, cfg: VoxelConfig = VoxelConfig()) -> VoxelGrid:
    """Mean-pool per-point features into occupied voxels."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or len(feats) != len(cloud):
        raise ShapeError(f"features {feats.shape} do not align with {len(cloud)} points")
    lo = np.asarray(cfg.bounds_min)
    hi = np.asarray(cfg.bounds_max)
    xyz = cloud.xyz
    inside = np.all((xyz >= lo) & (xyz < hi), axis=1)
    ijk = np.floor((xyz[inside] - lo) / np.asarray(cfg.voxel_size)).astype(np.int64)
    ijk = np.minimum(ijk, cfg.dims - 1)
    keys, inverse = np.unique(ijk, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    sums = np.zeros((len(keys), feats.shape[1]))
    np.add.at(sums, inverse, feats[inside])
    counts = np.bincount(inverse, minlength=len(keys)).astype(np.float64)
    point_voxel = np.full(len(cloud), -1, dtype=np.int64)
    point_voxel[inside] = inverse
    return VoxelGrid(keys, sums / counts[:, None], point_voxel)


def _linear(keys: np.ndarray, dims: np.ndarray) -> np.ndarray:
    return (keys[:, 0] * dims[1] + keys[:, 1]) * dims[2] + keys[:, 2]


def sparse_conv(grid: VoxelGrid, weight, bias=None) -> VoxelGrid:
    """Submanifold sparse convolution; output support equals input support.

    ``weight`` is ``3 x 3 x 3 x C_in x C_out`` (tap ``[1, 1, 1]`` is the centre)
    or ``1 x 1 x 1 x C_in x C_out``.
    """
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 5 or weight.shape[:3] not in ((3, 3, 3), (1, 1, 1)):
        raise ShapeError(f"kernel must be 3x3x3xCinxCout or 1x1x1xCinxCout, got {weight.shape}")
    c_in, c_out = weight.shape[3:]
    if len(grid) and grid.channels != c_in:
        raise ShapeError(f"kernel expects {c_in} channels, grid has {grid.channels}")
    b = np.zeros(c_out) if bias is None else np.asarray(bias, dtype=np.float64)
    if b.shape != (c_out,):
        raise ShapeError(f"bias must have shape ({c_out},)")
    if len(grid) == 0:
        return grid.with_features(np.zeros((0, c_out)))
    feats = grid.features
    out = np.tile(b, (len(grid), 1))
    if weight.shape[0] == 1:
        return grid.with_features(out + feats @ weight[0, 0, 0])
    # pad so neighbour keys never go negative / overflow
    keys = grid.keys + 1
    dims = keys.max(axis=0) + 2
    lin = _linear(keys, dims)
    order = np.argsort(lin)
    lin_sorted = lin[order]
    for off in OFFSETS_3:
        nb = _linear(keys + off, dims)
        pos = np.searchsorted(lin_sorted, nb)
        pos = np.minimum(pos, len(lin_sorted) - 1)
        hit = lin_sorted[pos] == nb
        if not hit.any():
            continue
        src = order[pos[hit]]
        dx, dy, dz = off + 1
        out[hit] += feats[src] @ weight[dx, dy, dz]
    return grid.with_features(out)


@dataclass(frozen=True)
class ScamWeights:
    spatial_weight: np.ndarray  # 3x3x3xCxC
    spatial_bias: np.ndarray
    channel_weight: np.ndarray  # 1x1x1xCxC
    channel_bias: np.ndarray

    @classmethod
    def zeros(cls, c: int) -> "ScamWeights":
        return cls(np.zeros((3, 3, 3, c, c)), np.zeros(c), np.zeros((1, 1, 1, c, c)), np.zeros(c))

    @classmethod
    def random(cls, c: int, seed: int = 0, scale: float = 0.3) -> "ScamWeights":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0, scale, (3, 3, 3, c, c)), rng.normal(0, scale, c),
                   rng.normal(0, scale, (1, 1, 1, c, c)), rng.normal(0, scale, c))

    @classmethod
    def from_mapping(cls, m: Mapping[str, np.ndarray], prefix: str = "scam") -> "ScamWeights":
        return cls(*(np.asarray(m[f"{prefix}.{k}"]) for k in
                     ("spatial.weight", "spatial.bias", "channel.weight", "channel.bias")))

    def to_mapping(self, prefix: str = "scam") -> dict[str, np.ndarray]:
        return {f"{prefix}.spatial.weight": self.spatial_weight,
                f"{prefix}.spatial.bias": self.spatial_bias,
                f"{prefix}.channel.weight": self.channel_weight,
                f"{prefix}.channel.bias": self.channel_bias}


def attention_scores(grid: VoxelGrid, w: ScamWeights) -> tuple[np.ndarray, np.ndarray]:
    f_s = tc.sigmoid(sparse_conv(grid, w.spatial_weight, w.spatial_bias).features)
    f_c = tc.sigmoid(sparse_conv(grid, w.channel_weight, w.channel_bias).features)
    return f_s, f_c


def scam_forward(grid: VoxelGrid, w: ScamWeights) -> VoxelGrid:
    """Scale every voxel feature by its spatial and channel attention scores."""
    if len(grid) == 0:
        return grid
    f_s, f_c = attention_scores(grid, w)
    if f_s.shape != grid.features.shape:
        raise ShapeError("attention kernels must preserve the channel count")
    return grid.with_features(grid.features * f_s * f_c)


def devoxelize(grid: VoxelGrid, cloud: PointCloud) -> np.ndarray:
    """Scatter voxel features back to the points; unassigned points get zeros."""
    pv = grid.point_voxel
    if len(pv) != len(cloud):
        raise AlignmentError(f"grid occupancy covers {len(pv)} points, cloud has {len(cloud)}")
    if len(pv) and pv.max(initial=-1) >= len(grid):
        raise AlignmentError("occupancy references a missing voxel")
    c = grid.features.shape[1] if grid.features.ndim == 2 else 0
    out = np.zeros((len(pv), c))
    hit = pv >= 0
    out[hit] = grid.features[pv[hit]]
    return out


@dataclass(frozen=True)
class MlpWeights:
    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    @classmethod
    def random(cls, sizes, seed: int = 0, scale: float = 0.5) -> "MlpWeights":
        rng = np.random.default_rng(seed)
        return cls(tuple((rng.normal(0, scale, (a, b)), rng.normal(0, scale, b))
                         for a, b in zip(sizes[:-1], sizes[1:])))


def point_mlp(feats, w: MlpWeights) -> np.ndarray:
    """Per-point stack of linear layers, each followed by a sigmoid."""
    x = np.asarray(feats, dtype=np.float64)
    for weight, bias in w.layers:
        if x.shape[1] != weight.shape[0]:
            raise ShapeError(f"layer expects {weight.shape[0]} inputs, got {x.shape[1]}")
        x = tc.sigmoid(x @ weight + bias)
    return x


def refine_head(refined, mlp_path, weight, bias, *, additive: bool = False) -> np.ndarray:
    """Per-point class scores from the refined voxel path and the MLP path.

    Paths are concatenated (or summed with ``additive``) and fed to one linear
    layer; ``weight`` is ``C x num_classes``.
    """
    refined = np.asarray(refined, dtype=np.float64)
    mlp_path = np.asarray(mlp_path, dtype=np.float64)
    if refined.ndim != 2 or mlp_path.ndim != 2 or len(refined) != len(mlp_path):
        raise ShapeError(f"point counts differ: {refined.shape} vs {mlp_path.shape}")
    if additive:
        if refined.shape != mlp_path.shape:
            raise ShapeError("additive fusion needs equal channel counts")
        fused = refined + mlp_path
    else:
        fused = np.concatenate([refined, mlp_path], axis=1)
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weight.shape[0] != fused.shape[1] or bias.shape != (weight.shape[1],):
        raise ShapeError(f"head {weight.shape}/{bias.shape} does not fit {fused.shape[1]} features")
    return fused @ weight + bias
