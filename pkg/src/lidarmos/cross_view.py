"""Cross-view index composition, geometric alignment of BEV features onto the
range image, and the fusion/encoder blocks built on :mod:`tensor_core`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import tensor_core as tc
from .bev_view import BevIndexMap
from .errors import CrossViewIndexError, ShapeError
from .range_view import RangeIndexMap


@dataclass(frozen=True)
class CrossViewMap:
    """``H_r x W_r x 2`` BEV cell ``(x, y)`` per range pixel; ``(-1, -1)`` where
    the pixel has no point or the point lies outside the BEV grid."""

    coords: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.coords[..., 0] >= 0


def compose_b2r(t_r2p: RangeIndexMap, t_p2b: BevIndexMap) -> CrossViewMap:
    idx = np.asarray(t_r2p.idx)
    cells = np.asarray(t_p2b.coords)
    n = len(cells)
    hit = idx >= 0
    if hit.any() and idx[hit].max() >= n:
        raise CrossViewIndexError(
            f"range index {int(idx[hit].max())} exceeds point->BEV map length {n}"
        )
    # index -1 lands on the appended sentinel row
    table = np.full((n + 1, 2), -1.0)
    table[:n] = np.where(cells[:, :1] >= 0, cells, -1)
    return CrossViewMap(np.take(table, idx, axis=0))


class FusionWeights(dict):
    """Name -> array mapping for every convolution in the fusion blocks.

    Layout (``weight`` is ``C_out x C_in x k x k``, ``bias`` is ``C_out``)::

        fuse.reduce  1x1  (C_r + C_b) -> C_r
        fuse.spatial 3x3  C_r -> C_r
        fuse.gate    1x1  C_r -> C_r
        msf.sem      1x1  C_sem -> C_m
        msf.chan     1x1  C_m -> C_m
        bev.conv1    3x3  C_in -> C_bev
        bev.conv2    3x3  C_bev -> C_bev
    """

    def conv(self, name: str):
        try:
            return self[f"{name}.weight"], self[f"{name}.bias"]
        except KeyError as exc:
            raise ShapeError(f"missing weights for {name}") from exc

    @classmethod
    def from_mapping(cls, m: Mapping[str, np.ndarray]) -> "FusionWeights":
        return cls({k: np.asarray(v) for k, v in m.items()})


_LAYOUT = {
    "fuse.reduce": ("c_r", "c_rb", 1),
    "fuse.spatial": ("c_r", "c_r", 3),
    "fuse.gate": ("c_r", "c_r", 1),
    "msf.sem": ("c_m", "c_sem", 1),
    "msf.chan": ("c_m", "c_m", 1),
    "bev.conv1": ("c_bev", "c_in", 3),
    "bev.conv2": ("c_bev", "c_bev", 3),
}


def _shapes(c_r, c_b, c_sem, c_m, c_in, c_bev):
    dims = dict(c_r=c_r, c_rb=c_r + c_b, c_sem=c_sem, c_m=c_m, c_in=c_in, c_bev=c_bev)
    for name, (o, i, k) in _LAYOUT.items():
        yield name, (dims[o], dims[i], k, k), (dims[o],)


def random_fusion_weights(seed: int = 0, *, c_r=4, c_b=4, c_sem=4, c_m=4, c_in=4, c_bev=4,
                          scale: float = 0.5) -> FusionWeights:
    rng = np.random.default_rng(seed)
    w = FusionWeights()
    for name, ws, bs in _shapes(c_r, c_b, c_sem, c_m, c_in, c_bev):
        w[f"{name}.weight"] = rng.normal(0.0, scale, ws)
        w[f"{name}.bias"] = rng.normal(0.0, scale, bs)
    return w


def zero_fusion_weights(*, c_r=4, c_b=4, c_sem=4, c_m=4, c_in=4, c_bev=4) -> FusionWeights:
    w = FusionWeights()
    for name, ws, bs in _shapes(c_r, c_b, c_sem, c_m, c_in, c_bev):
        w[f"{name}.weight"] = np.zeros(ws)
        w[f"{name}.bias"] = np.zeros(bs)
    return w


def geometric_align(m_b, cv_map: CrossViewMap, target_h: int, target_w: int,
                    grid_hw: tuple[int, int] | None = None) -> np.ndarray:
    """Resample BEV features ``m_b`` (``C x H_b x W_b``) at every range pixel.

    The coordinate map is bilinearly resized to ``target_h x target_w``; a
    resized pixel stays valid only if every source pixel it blends is valid.
    ``grid_hw`` is the BEV grid the coordinates index (defaults to ``m_b``'s
    own size), which lets coarser feature maps be sampled at matching centres.
    Invalid pixels receive zero vectors.
    """
    m_b = np.asarray(m_b, dtype=np.float64)
    if m_b.ndim != 3:
        raise ShapeError(f"m_b must be C x H x W, got {m_b.shape}")
    coords = np.asarray(cv_map.coords, dtype=np.float64)
    if coords.ndim != 3 or coords.shape[2] != 2:
        raise ShapeError(f"coordinate map must be H x W x 2, got {coords.shape}")
    if target_h < 1 or target_w < 1:
        raise ShapeError("target size must be positive")
    grid_h, grid_w = grid_hw if grid_hw is not None else m_b.shape[1:]
    xy = coords.transpose(2, 0, 1)
    valid = (xy[0] >= 0).astype(np.float64)[None]
    if xy.shape[1:] != (target_h, target_w):
        xy = tc.resize_bilinear(xy, target_h, target_w)
        valid = tc.resize_bilinear(valid, target_h, target_w)
    ok = valid[0] >= 1.0 - 1e-12
    nx, ny = tc.normalize_coords(xy[0], xy[1], grid_w, grid_h)
    # park invalid pixels far outside so padding yields zeros as well
    nx = np.where(ok, nx, -4.0)
    ny = np.where(ok, ny, -4.0)
    out = tc.bilinear_sample(m_b, np.stack([nx, ny]))
    return out * ok


def attention_fuse(m_r, m_b2r, w: FusionWeights, *, gate_sigmoid: bool = False) -> np.ndarray:
    """Concatenate RV and aligned BEV features, mix them with a 1x1 then 3x3
    convolution, gate with a further 1x1 convolution and add the RV input back."""
    m_r = np.asarray(m_r, dtype=np.float64)
    m_b2r = np.asarray(m_b2r, dtype=np.float64)
    if m_r.ndim != 3 or m_b2r.ndim != 3 or m_r.shape[1:] != m_b2r.shape[1:]:
        raise ShapeError(f"spatial dims differ: {m_r.shape} vs {m_b2r.shape}")
    f = np.concatenate([m_r, m_b2r], axis=0)
    f = tc.conv2d(f, *w.conv("fuse.reduce"))
    f = tc.conv2d(f, *w.conv("fuse.spatial"))
    gate = tc.conv2d(f, *w.conv("fuse.gate"))
    if gate_sigmoid:
        gate = tc.sigmoid(gate)
    if f.shape != m_r.shape:
        raise ShapeError(f"fusion output {f.shape} does not match RV input {m_r.shape}")
    return f * gate + m_r


def motion_semantic_fuse(f_sem, f_motion, f_res, w: FusionWeights) -> np.ndarray:
    """Semantic-gated motion features, reweighted per channel, plus the
    residual skip path."""
    f_sem = np.asarray(f_sem, dtype=np.float64)
    f_motion = np.asarray(f_motion, dtype=np.float64)
    f_res = np.asarray(f_res, dtype=np.float64)
    if not (f_sem.shape[1:] == f_motion.shape[1:] == f_res.shape[1:]):
        raise ShapeError("semantic, motion and residual maps must share spatial dims")
    if f_res.shape != f_motion.shape:
        raise ShapeError(f"residual {f_res.shape} must match motion {f_motion.shape}")
    c = f_motion.shape[0]
    f_s = tc.sigmoid(tc.conv2d(f_sem, *w.conv("msf.sem"))) * f_motion
    f_f = tc.channel_softmax(tc.conv2d(tc.global_avg_pool(f_s), *w.conv("msf.chan"))) * c
    return f_s * f_f + f_res


def bev_encode(f_bev_motion, w: FusionWeights) -> np.ndarray:
    x = np.asarray(f_bev_motion, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] < 2 or x.shape[2] < 2:
        raise ShapeError(f"BEV encoder needs C x H x W with H, W >= 2, got {x.shape}")
    # odd trailing row/column is dropped, as a floor-mode 2x2 pool would
    x = tc.max_pool2x2(x[:, : x.shape[1] // 2 * 2, : x.shape[2] // 2 * 2])
    x = tc.conv2d(x, *w.conv("bev.conv1"))
    return tc.conv2d(x, *w.conv("bev.conv2"))
