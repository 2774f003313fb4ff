"""Per-frame composition of the projection, residual and cross-view stages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bev_view as bv
from . import range_view as rv
from . import scam
from .cross_view import CrossViewMap, compose_b2r
from .scan_io import ScanFrame


@dataclass
class FrameOutputs:
    range_image: rv.RangeImage
    range_index: rv.RangeIndexMap
    rv_residual: rv.RvResidualMap
    bev_image: bv.BevImage
    bev_residual: bv.BevResidualMap
    t_p2b: bv.BevIndexMap
    t_b2r: CrossViewMap


@dataclass
class FramePipeline:
    """Streams frames in order; the BEV window state is carried between calls."""

    rv_cfg: rv.RvConfig = field(default_factory=rv.RvConfig)
    bev_cfg: bv.BevConfig = field(default_factory=bv.BevConfig)
    state: bv.TemporalWindowPair = field(init=False)

    def __post_init__(self):
        self.state = bv.TemporalWindowPair(self.bev_cfg)

    def process(self, current: ScanFrame, past: list[ScanFrame]) -> FrameOutputs:
        img, idx = rv.build_range_image(current.cloud, self.rv_cfg)
        res = rv.build_rv_residual(current, past, self.rv_cfg, current_image=img)
        bev_res = bv.push_frame_and_residual(self.state, current)
        bev_img = self.state.current_image
        t_p2b = bv.build_t_p2b(current.cloud, self.bev_cfg)
        return FrameOutputs(img, idx, res, bev_img, bev_res, t_p2b, compose_b2r(idx, t_p2b))


def point_features(frame: ScanFrame, out: FrameOutputs, rv_cfg: rv.RvConfig) -> np.ndarray:
    """Per-point motion features: the RV residual at the point's pixel followed
    by the BEV residual channels at its polar cell (zeros where undefined)."""
    n = len(frame.cloud)
    res = out.rv_residual.values
    bev = out.bev_residual.channels
    feats = np.zeros((n, res.shape[2] + bev.shape[2]))
    u, v = rv.project_points(frame.cloud, rv_cfg)
    hit = u >= 0
    feats[hit, : res.shape[2]] = res[v[hit], u[hit]]
    cells = out.t_p2b.coords
    ok = cells[:, 0] >= 0
    feats[ok, res.shape[2]:] = bev[cells[ok, 1], cells[ok, 0]]
    return feats


@dataclass(frozen=True)
class RefineWeights:
    scam: scam.ScamWeights
    mlp: scam.MlpWeights
    head_weight: np.ndarray
    head_bias: np.ndarray

    def to_mapping(self) -> dict[str, np.ndarray]:
        m = self.scam.to_mapping()
        for i, (w, b) in enumerate(self.mlp.layers):
            m[f"mlp.{i}.weight"] = w
            m[f"mlp.{i}.bias"] = b
        m["head.weight"] = self.head_weight
        m["head.bias"] = self.head_bias
        return m

    @classmethod
    def from_mapping(cls, m) -> "RefineWeights":
        layers = []
        i = 0
        while f"mlp.{i}.weight" in m:
            layers.append((np.asarray(m[f"mlp.{i}.weight"]), np.asarray(m[f"mlp.{i}.bias"])))
            i += 1
        return cls(scam.ScamWeights.from_mapping(m), scam.MlpWeights(tuple(layers)),
                   np.asarray(m["head.weight"]), np.asarray(m["head.bias"]))


def threshold_refine_weights(n_rv: int, n_bev: int, threshold: float = 0.05,
                             hidden: int = 8) -> RefineWeights:
    """Untrained stand-in weights: a point is scored moving when the voxel
    mean of its RV residual channels exceeds ``threshold``.

    Zero attention kernels scale voxel features by exactly 0.25, which the
    head undoes; the MLP path contributes nothing.
    """
    c = n_rv + n_bev
    head_w = np.zeros((c + hidden, 2))
    head_w[:n_rv, 1] = 4.0 / n_rv
    head_b = np.array([threshold, 0.0])
    mlp = scam.MlpWeights(((np.zeros((c, hidden)), np.zeros(hidden)),
                           (np.zeros((hidden, hidden)), np.zeros(hidden))))
    return RefineWeights(scam.ScamWeights.zeros(c), mlp, head_w, head_b)


def refine_scores(frame: ScanFrame, feats: np.ndarray, w: RefineWeights,
                  vox_cfg: scam.VoxelConfig = scam.VoxelConfig()) -> np.ndarray:
    grid = scam.voxelize(frame.cloud, feats, vox_cfg)
    refined = scam.devoxelize(scam.scam_forward(grid, w.scam), frame.cloud)
    return scam.refine_head(refined, scam.point_mlp(feats, w.mlp), w.head_weight, w.head_bias)
