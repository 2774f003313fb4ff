"""Scalar loop references for the dense and sparse kernels.

Written straight from the definitions, one output element at a time, so they
share no vectorised code with the package.
"""

import itertools
import math

import numpy as np


def conv2d(x, k, b):
    c_in, h, w = x.shape
    c_out, _, ks, _ = k.shape
    r = ks // 2
    out = np.zeros((c_out, h, w))
    for co in range(c_out):
        for i in range(h):
            for j in range(w):
                s = b[co]
                for ci in range(c_in):
                    for di in range(ks):
                        for dj in range(ks):
                            ii, jj = i + di - r, j + dj - r
                            if 0 <= ii < h and 0 <= jj < w:
                                s += k[co, ci, di, dj] * x[ci, ii, jj]
                out[co, i, j] = s
    return out


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def max_pool2x2(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for ci in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ci, i, j] = max(x[ci, 2 * i + a, 2 * j + bb] for a in (0, 1) for bb in (0, 1))
    return out


def bilinear_at(src, px, py):
    """Value of ``src`` at continuous pixel position (px, py); zero outside."""
    c, h, w = src.shape
    x0, y0 = math.floor(px), math.floor(py)
    out = np.zeros(c)
    for yy in (y0, y0 + 1):
        for xx in (x0, x0 + 1):
            if 0 <= xx < w and 0 <= yy < h:
                out += src[:, yy, xx] * (1 - abs(px - xx)) * (1 - abs(py - yy))
    return out


def bilinear_sample(src, coords):
    _, h, w = src.shape
    _, ho, wo = coords.shape
    out = np.zeros((src.shape[0], ho, wo))
    for i in range(ho):
        for j in range(wo):
            # pixel centre k sits at normalised (2k + 1) / n - 1
            px = (coords[0, i, j] + 1.0) * w / 2.0 - 0.5
            py = (coords[1, i, j] + 1.0) * h / 2.0 - 0.5
            out[:, i, j] = bilinear_at(src, px, py)
    return out


def _resize_taps(n_in, n_out, k):
    s = max((k + 0.5) * n_in / n_out - 0.5, 0.0)
    i0 = min(int(math.floor(s)), n_in - 1)
    return i0, min(i0 + 1, n_in - 1), s - i0


def geometric_align(m_b, coords_hw2, th, tw, grid_hw=None):
    h, w = coords_hw2.shape[:2]
    gh, gw = grid_hw or m_b.shape[1:]
    out = np.zeros((m_b.shape[0], th, tw))
    for i in range(th):
        y0, y1, ty = _resize_taps(h, th, i) if h != th else (i, i, 0.0)
        for j in range(tw):
            x0, x1, tx = _resize_taps(w, tw, j) if w != tw else (j, j, 0.0)
            taps = [(y0, x0, (1 - ty) * (1 - tx)), (y0, x1, (1 - ty) * tx),
                    (y1, x0, ty * (1 - tx)), (y1, x1, ty * tx)]
            if any(wt > 0 and coords_hw2[a, bb, 0] < 0 for a, bb, wt in taps):
                continue
            cx = sum(wt * coords_hw2[a, bb, 0] for a, bb, wt in taps)
            cy = sum(wt * coords_hw2[a, bb, 1] for a, bb, wt in taps)
            # grid cell centres -> feature-map pixel positions
            out[:, i, j] = bilinear_at(m_b, (cx + 0.5) * m_b.shape[2] / gw - 0.5,
                                       (cy + 0.5) * m_b.shape[1] / gh - 0.5)
    return out


def attention_fuse(m_r, m_b2r, w):
    f = np.concatenate([m_r, m_b2r])
    f = conv2d(f, w["fuse.reduce.weight"], w["fuse.reduce.bias"])
    f = conv2d(f, w["fuse.spatial.weight"], w["fuse.spatial.bias"])
    g = conv2d(f, w["fuse.gate.weight"], w["fuse.gate.bias"])
    out = np.zeros_like(m_r)
    for idx in np.ndindex(*m_r.shape):
        out[idx] = f[idx] * g[idx] + m_r[idx]
    return out


def motion_semantic_fuse(f_sem, f_motion, f_res, w):
    c, h, wd = f_motion.shape
    gate = conv2d(f_sem, w["msf.sem.weight"], w["msf.sem.bias"])
    f_s = np.zeros_like(f_motion)
    for idx in np.ndindex(c, h, wd):
        f_s[idx] = sigmoid(gate[idx]) * f_motion[idx]
    pooled = np.array([[[sum(f_s[ci, i, j] for i in range(h) for j in range(wd)) / (h * wd)]]
                       for ci in range(c)])
    logits = conv2d(pooled, w["msf.chan.weight"], w["msf.chan.bias"])[:, 0, 0]
    m = max(logits)
    z = sum(math.exp(v - m) for v in logits)
    f_f = [math.exp(v - m) / z * c for v in logits]
    out = np.zeros_like(f_motion)
    for ci, i, j in np.ndindex(c, h, wd):
        out[ci, i, j] = f_s[ci, i, j] * f_f[ci] + f_res[ci, i, j]
    return out


def bev_encode(x, w):
    x = x[:, : x.shape[1] // 2 * 2, : x.shape[2] // 2 * 2]
    x = max_pool2x2(x)
    x = conv2d(x, w["bev.conv1.weight"], w["bev.conv1.bias"])
    return conv2d(x, w["bev.conv2.weight"], w["bev.conv2.bias"])


def sparse_conv(keys, feats, weight, bias):
    """Submanifold convolution by dictionary lookup of every neighbour."""
    table = {tuple(int(v) for v in k): n for n, k in enumerate(keys)}
    ks = weight.shape[0]
    r = ks // 2
    out = np.zeros((len(keys), weight.shape[4]))
    for n, k in enumerate(keys):
        acc = np.array(bias, dtype=np.float64)
        for dx, dy, dz in itertools.product(range(ks), repeat=3):
            nb = (int(k[0]) + dx - r, int(k[1]) + dy - r, int(k[2]) + dz - r)
            m = table.get(nb)
            if m is not None:
                for ci in range(weight.shape[3]):
                    acc = acc + feats[m, ci] * weight[dx, dy, dz, ci]
        out[n] = acc
    return out


def scam_forward(keys, feats, w):
    s = sparse_conv(keys, feats, w.spatial_weight, w.spatial_bias)
    c = sparse_conv(keys, feats, w.channel_weight, w.channel_bias)
    out = np.zeros_like(feats)
    for idx in np.ndindex(*feats.shape):
        out[idx] = feats[idx] * sigmoid(s[idx]) * sigmoid(c[idx])
    return out


def voxel_means(xyz, feats, lo, size):
    groups = {}
    for p, f in zip(xyz, feats):
        key = tuple(int(math.floor((p[a] - lo[a]) / size[a])) for a in range(3))
        groups.setdefault(key, []).append(f)
    return {k: np.mean(v, axis=0) for k, v in groups.items()}



def jaccard_set_loss(mistakes, fg):
    """``|M| / |G u M|`` for mispredicted set ``M`` and ground-truth set ``G``."""
    union = len(fg | mistakes)
    return len(mistakes) / union if union else 0.0


def lovasz_extension(errors, fg):
    """Lovasz extension of the Jaccard set loss at ``errors``, from its
    integral form: integrate the set loss of ``{i: e_i >= t}`` over t in [0, 1]."""
    levels = sorted({float(e) for e in errors if e > 0}, reverse=True) + [0.0]
    g = {i for i, f in enumerate(fg) if f}
    total = 0.0
    for hi, lo in zip(levels[:-1], levels[1:]):
        above = {i for i, e in enumerate(errors) if e >= hi}
        total += (hi - lo) * jaccard_set_loss(above, g)
    return total


def lovasz_two_class(p1, gt):
    """Mean over classes present in ``gt`` for probabilities ``(1 - p1, p1)``."""
    losses = []
    for c in (0, 1):
        fg = [int(g == c) for g in gt]
        if not any(fg):
            continue
        pc = [p if c == 1 else 1.0 - p for p in p1]
        losses.append(lovasz_extension([abs(f - p) for f, p in zip(fg, pc)], fg))
    return sum(losses) / len(losses) if losses else 0.0
