# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled point-projection kernels.

Point arrays are ``N x K`` (``K >= 3``) C-contiguous float64; only columns
0-2 are read. An optional 4x4 ``transform`` is applied to every point first.
Every expression is written in the same order as the numpy twin in
``_pykernels`` so both backends round identically.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport atan2, asin, sqrt, floor, INFINITY, M_PI

cnp.import_array()

NAME = "cython"


cdef struct Xform:
    bint on
    double m[12]


cdef Xform _make_xform(transform) except *:
    cdef Xform t
    cdef int k
    t.on = transform is not None
    if t.on:
        a = np.ascontiguousarray(transform, dtype=np.float64).reshape(4, 4)
        for k in range(12):
            t.m[k] = a[k // 4, k % 4]
    return t


cdef inline void _load(const double[:, ::1] pts, Py_ssize_t i, Xform* t,
                       double* x, double* y, double* z) noexcept nogil:
    cdef double a = pts[i, 0], b = pts[i, 1], c = pts[i, 2]
    if t.on:
        x[0] = t.m[0] * a + t.m[1] * b + t.m[2] * c + t.m[3]
        y[0] = t.m[4] * a + t.m[5] * b + t.m[6] * c + t.m[7]
        z[0] = t.m[8] * a + t.m[9] * b + t.m[10] * c + t.m[11]
    else:
        x[0] = a; y[0] = b; z[0] = c


cdef inline int _rv_pixel(double x, double y, double z, long h, long w, double fov_down,
                          double fov, double* r, long* u, long* v) noexcept nogil:
    cdef double fv, fu
    r[0] = sqrt(x * x + y * y + z * z)
    if not (r[0] > 0.0):
        return 0
    fv = floor((1.0 - (asin(z / r[0]) + fov_down) / fov) * h)
    if fv < 0.0 or fv >= h:
        return 0
    fu = floor(0.5 * (1.0 - atan2(y, x) / M_PI) * w)
    u[0] = <long>fu
    if u[0] > w - 1:
        u[0] = w - 1
    if u[0] < 0:
        u[0] = 0
    v[0] = <long>fv
    return 1


def _pts(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] < 3:
        raise ValueError(f"points must be N x K with K >= 3, got {a.shape}")
    return a


def project_range(pts_in, long h, long w, double fov_up, double fov_down, transform=None):
    """Per-point range-image pixel ``(u, v)``; ``-1`` for zero-range or
    out-of-field points."""
    cdef const double[:, ::1] pts = _pts(pts_in)
    cdef Py_ssize_t n = pts.shape[0], i
    cdef Xform t = _make_xform(transform)
    cdef double fov = fov_up + fov_down
    cdef double x, y, z, r
    cdef long u = 0, v = 0
    u_out = np.full(n, -1, dtype=np.int64)
    v_out = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] uo = u_out
    cdef cnp.int64_t[::1] vo = v_out
    with nogil:
        for i in range(n):
            _load(pts, i, &t, &x, &y, &z)
            if _rv_pixel(x, y, z, h, w, fov_down, fov, &r, &u, &v):
                uo[i] = u
                vo[i] = v
    return u_out, v_out


def range_index(pts_in, long h, long w, double fov_up, double fov_down, transform=None):
    """Nearest-wins scatter. Returns ``(idx, rng)``: ``h x w`` winning point
    index (ties to the lower index) and its range, both ``-1`` where empty."""
    cdef const double[:, ::1] pts = _pts(pts_in)
    cdef Py_ssize_t n = pts.shape[0], i
    cdef Xform t = _make_xform(transform)
    cdef double fov = fov_up + fov_down
    idx = np.full((h, w), -1, dtype=np.int64)
    rng = np.full((h, w), -1.0, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] im = idx
    cdef double[:, ::1] rm = rng
    cdef double x, y, z, r
    cdef long u = 0, v = 0
    with nogil:
        for i in range(n):
            _load(pts, i, &t, &x, &y, &z)
            if not _rv_pixel(x, y, z, h, w, fov_down, fov, &r, &u, &v):
                continue
            if im[v, u] < 0 or r < rm[v, u]:
                im[v, u] = i
                rm[v, u] = r
    return idx, rng


cdef inline int _bev_cell(double x, double y, double rho_min, double rho_max,
                          double th_min, double th_max, long h, long w,
                          long* cx, long* cy) noexcept nogil:
    cdef double rho = sqrt(x * x + y * y)
    cdef double th
    cdef long a, b
    if not (rho >= rho_min and rho < rho_max):
        return 0
    th = atan2(y, x)
    if not (th >= th_min and th < th_max):
        return 0
    a = <long>floor((rho - rho_min) * w / (rho_max - rho_min))
    b = <long>floor((th - th_min) * h / (th_max - th_min))
    if a > w - 1:
        a = w - 1
    if b > h - 1:
        b = h - 1
    cx[0] = a
    cy[0] = b
    return 1


def bev_assign(pts_in, long h, long w, double rho_min, double rho_max,
               double th_min, double th_max, transform=None):
    """``N x 2`` array of ``(radial bin, angular bin)``, ``(-1, -1)`` outside the grid."""
    cdef const double[:, ::1] pts = _pts(pts_in)
    cdef Py_ssize_t n = pts.shape[0], i
    cdef Xform t = _make_xform(transform)
    out = np.full((n, 2), -1, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] o = out
    cdef double x, y, z
    cdef long cx = 0, cy = 0
    with nogil:
        for i in range(n):
            _load(pts, i, &t, &x, &y, &z)
            if _bev_cell(x, y, rho_min, rho_max, th_min, th_max, h, w, &cx, &cy):
                o[i, 0] = cx
                o[i, 1] = cy
    return out


def bev_accumulate(pts_in, transform, double[:, :, ::1] lohi, double rho_min, double rho_max,
                   double th_min, double th_max, double z_min, double z_max):
    """Fold one cloud into the ``h x w x 2`` running (min z, max z) array in
    place. Untouched cells keep ``(+inf, -inf)``."""
    cdef const double[:, ::1] pts = _pts(pts_in)
    cdef Py_ssize_t n = pts.shape[0], i
    cdef Xform t = _make_xform(transform)
    cdef long h = lohi.shape[0], w = lohi.shape[1]
    cdef double x, y, z
    cdef long cx = 0, cy = 0
    with nogil:
        for i in range(n):
            _load(pts, i, &t, &x, &y, &z)
            if not (z > z_min and z < z_max):
                continue
            if not _bev_cell(x, y, rho_min, rho_max, th_min, th_max, h, w, &cx, &cy):
                continue
            if z < lohi[cy, cx, 0]:
                lohi[cy, cx, 0] = z
            if z > lohi[cy, cx, 1]:
                lohi[cy, cx, 1] = z


def new_accumulator(long h, long w):
    a = np.empty((h, w, 2), dtype=np.float64)
    a[..., 0] = INFINITY
    a[..., 1] = -INFINITY
    return a
