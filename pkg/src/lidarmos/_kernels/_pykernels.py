"""Pure-numpy twin of ``_ckernels``; same signatures, same operation order.

numpy's SIMD ``arctan2``/``arcsin`` may differ from libm in the last bit, so
bin assignments can only disagree with the compiled backend for points lying
within one ulp of a bin edge.
"""

import numpy as np

NAME = "python"


def _load(pts, transform):
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 3:
        raise ValueError(f"points must be N x K with K >= 3, got {pts.shape}")
    a, b, c = pts[:, 0], pts[:, 1], pts[:, 2]
    if transform is None:
        return a, b, c
    m = np.asarray(transform, dtype=np.float64).reshape(4, 4)
    return tuple(m[k, 0] * a + m[k, 1] * b + m[k, 2] * c + m[k, 3] for k in range(3))


def _rv_pixels(x, y, z, h, w, fov_up, fov_down):
    fov = fov_up + fov_down
    r = np.sqrt(x * x + y * y + z * z)
    sel = np.flatnonzero(r > 0.0)
    fv = np.floor((1.0 - (np.arcsin(z[sel] / r[sel]) + fov_down) / fov) * h)
    keep = (fv >= 0.0) & (fv < h)
    sel = sel[keep]
    fu = np.floor(0.5 * (1.0 - np.arctan2(y[sel], x[sel]) / np.pi) * w)
    u = np.clip(fu.astype(np.int64), 0, w - 1)
    return sel, u, fv[keep].astype(np.int64), r[sel]


def project_range(pts, h, w, fov_up, fov_down, transform=None):
    x, y, z = _load(pts, transform)
    n = len(x)
    u_out = np.full(n, -1, dtype=np.int64)
    v_out = np.full(n, -1, dtype=np.int64)
    sel, u, v, _ = _rv_pixels(x, y, z, h, w, fov_up, fov_down)
    u_out[sel] = u
    v_out[sel] = v
    return u_out, v_out


def range_index(pts, h, w, fov_up, fov_down, transform=None):
    x, y, z = _load(pts, transform)
    idx = np.full((h, w), -1, dtype=np.int64)
    rng = np.full((h, w), -1.0)
    sel, u, v, r = _rv_pixels(x, y, z, h, w, fov_up, fov_down)
    if len(sel) == 0:
        return idx, rng
    flat = v * w + u
    # pixel, then range, then point index
    order = np.lexsort((sel, r, flat))
    flat_s = flat[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_s[1:] != flat_s[:-1]
    win = order[first]
    idx.ravel()[flat_s[first]] = sel[win]
    rng.ravel()[flat_s[first]] = r[win]
    return idx, rng


def _bev_cells(x, y, h, w, rho_min, rho_max, th_min, th_max):
    rho = np.sqrt(x * x + y * y)
    sel = np.flatnonzero((rho >= rho_min) & (rho < rho_max))
    th = np.arctan2(y[sel], x[sel])
    keep = (th >= th_min) & (th < th_max)
    sel = sel[keep]
    cx = np.floor((rho[sel] - rho_min) * w / (rho_max - rho_min)).astype(np.int64)
    cy = np.floor((th[keep] - th_min) * h / (th_max - th_min)).astype(np.int64)
    return sel, np.minimum(cx, w - 1), np.minimum(cy, h - 1)


def bev_assign(pts, h, w, rho_min, rho_max, th_min, th_max, transform=None):
    x, y, _ = _load(pts, transform)
    out = np.full((len(x), 2), -1, dtype=np.int64)
    sel, cx, cy = _bev_cells(x, y, h, w, rho_min, rho_max, th_min, th_max)
    out[sel, 0] = cx
    out[sel, 1] = cy
    return out


def bev_accumulate(pts, transform, lohi, rho_min, rho_max, th_min, th_max, z_min, z_max):
    x, y, z = _load(pts, transform)
    h, w = lohi.shape[:2]
    zin = np.flatnonzero((z > z_min) & (z < z_max))
    sel, cx, cy = _bev_cells(x[zin], y[zin], h, w, rho_min, rho_max, th_min, th_max)
    if len(sel) == 0:
        return
    zz = z[zin][sel]
    flat = cy * w + cx
    lo = lohi[..., 0].reshape(-1)
    hi = lohi[..., 1].reshape(-1)
    cell_lo = np.full(h * w, np.inf)
    cell_hi = np.full(h * w, -np.inf)
    np.minimum.at(cell_lo, flat, zz)
    np.maximum.at(cell_hi, flat, zz)
    lohi[..., 0] = np.minimum(lo, cell_lo).reshape(h, w)
    lohi[..., 1] = np.maximum(hi, cell_hi).reshape(h, w)


def new_accumulator(h, w):
    a = np.empty((h, w, 2))
    a[..., 0] = np.inf
    a[..., 1] = -np.inf
    return a
