# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; semantics identical to ``_pykernels``."""

from libc.math cimport cos, sin, floor, ceil, M_PI
from libc.stdlib cimport malloc, free, qsort

import numpy as np
cimport numpy as cnp

cnp.import_array()

NAME = "cython"

cdef enum:
    MAXV = 16


cdef void _corners(double x, double y, double w, double h, double th,
                   double* px, double* py) noexcept nogil:
    cdef double t = th * M_PI / 180.0
    cdef double c = cos(t), s = sin(t)
    cdef double ux = 0.5 * w * c, uy = -0.5 * w * s
    cdef double vx = 0.5 * h * s, vy = 0.5 * h * c
    px[0] = x - ux - vx; py[0] = y - uy - vy
    px[1] = x + ux - vx; py[1] = y + uy - vy
    px[2] = x + ux + vx; py[2] = y + uy + vy
    px[3] = x - ux + vx; py[3] = y - uy + vy
    cdef double a = _area(px, py, 4)
    cdef double tx, ty
    if a < 0:
        tx = px[0]; px[0] = px[3]; px[3] = tx
        ty = py[0]; py[0] = py[3]; py[3] = ty
        tx = px[1]; px[1] = px[2]; px[2] = tx
        ty = py[1]; py[1] = py[2]; py[2] = ty


cdef double _area(double* px, double* py, int n) noexcept nogil:
    cdef double a = 0.0
    cdef int i, j
    for i in range(n):
        j = (i + 1) % n
        a += px[i] * py[j] - px[j] * py[i]
    return 0.5 * a


cdef double _rect_iou(double ax, double ay, double aw, double ah, double at,
                      double bx, double by, double bw, double bh, double bt) noexcept nogil:
    cdef double sx[MAXV]
    cdef double sy[MAXV]
    cdef double tx[MAXV]
    cdef double ty[MAXV]
    cdef double cx[4]
    cdef double cy[4]
    cdef int n = 4, m, i, j, k
    cdef double ex, ey, px, py, qx, qy, dp, dq, t, inter, union_
    _corners(ax, ay, aw, ah, at, sx, sy)
    _corners(bx, by, bw, bh, bt, cx, cy)
    for i in range(4):
        if n == 0:
            break
        ex = cx[(i + 1) % 4] - cx[i]
        ey = cy[(i + 1) % 4] - cy[i]
        m = 0
        for j in range(n):
            px = sx[j]; py = sy[j]
            k = (j + 1) % n
            qx = sx[k]; qy = sy[k]
            dp = ex * (py - cy[i]) - ey * (px - cx[i])
            dq = ex * (qy - cy[i]) - ey * (qx - cx[i])
            if dp >= 0:
                tx[m] = px; ty[m] = py; m += 1
                if dq < 0:
                    t = dp / (dp - dq)
                    tx[m] = px + t * (qx - px); ty[m] = py + t * (qy - py); m += 1
            elif dq >= 0:
                t = dp / (dp - dq)
                tx[m] = px + t * (qx - px); ty[m] = py + t * (qy - py); m += 1
        n = m
        for j in range(n):
            sx[j] = tx[j]; sy[j] = ty[j]
    if n < 3:
        return 0.0
    inter = _area(sx, sy, n)
    if inter <= 0.0:
        return 0.0
    union_ = aw * ah + bw * bh - inter
    if union_ <= 0.0:
        return 0.0
    t = inter / union_
    if t > 1.0 - 1e-12:
        return 1.0
    return t


def rect_corners(double x, double y, double w, double h, double theta_deg):
    cdef double px[4]
    cdef double py[4]
    _corners(x, y, w, h, theta_deg, px, py)
    return [(px[i], py[i]) for i in range(4)]


def rect_iou(a, b):
    return _rect_iou(a[0], a[1], a[2], a[3], a[4], b[0], b[1], b[2], b[3], b[4])


def rect_iou_many(a, bs):
    cdef double[:, ::1] b = np.ascontiguousarray(np.asarray(bs, dtype=np.float64).reshape(-1, 5))
    cdef Py_ssize_t n = b.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double ax = a[0], ay = a[1], aw = a[2], ah = a[3], at = a[4]
    with nogil:
        for i in range(n):
            o[i] = _rect_iou(ax, ay, aw, ah, at, b[i, 0], b[i, 1], b[i, 2], b[i, 3], b[i, 4])
    return out


cdef int _cmp_double(const void* a, const void* b) noexcept nogil:
    cdef double da = (<double*>a)[0], db = (<double*>b)[0]
    return (da > db) - (da < db)


def fill_ring(cnp.uint8_t[:, ::1] out, ring):
    cdef double[:, ::1] r = np.ascontiguousarray(np.asarray(ring, dtype=np.float64))
    cdef Py_ssize_t n = r.shape[0]
    cdef int h = out.shape[0], w = out.shape[1]
    cdef double ymin = r[0, 1], ymax = r[0, 1]
    cdef Py_ssize_t i, j
    cdef int row, r0, r1, k, c0, c1, c, cnt
    cdef double y0, y1, x0, x1
    for i in range(n):
        if r[i, 1] < ymin:
            ymin = r[i, 1]
        if r[i, 1] > ymax:
            ymax = r[i, 1]
    r0 = <int>ceil(ymin)
    if r0 < 0:
        r0 = 0
    r1 = <int>floor(ymax)
    if r1 > h - 1:
        r1 = h - 1
    cdef double* xi = <double*>malloc((n + 1) * sizeof(double))
    if xi == NULL:
        raise MemoryError()
    try:
        with nogil:
            for row in range(r0, r1 + 1):
                cnt = 0
                for i in range(n):
                    j = (i + 1) % n
                    y0 = r[i, 1]; y1 = r[j, 1]
                    if (y0 > row) != (y1 > row):
                        x0 = r[i, 0]; x1 = r[j, 0]
                        xi[cnt] = x0 + (row - y0) * (x1 - x0) / (y1 - y0)
                        cnt += 1
                if cnt < 2:
                    continue
                qsort(xi, cnt, sizeof(double), _cmp_double)
                k = 0
                while k + 1 < cnt:
                    c0 = <int>ceil(xi[k])
                    c1 = <int>ceil(xi[k + 1])
                    if c0 < 0:
                        c0 = 0
                    if c1 > w:
                        c1 = w
                    for c in range(c0, c1):
                        out[row, c] ^= 1
                    k += 2
    finally:
        free(xi)
    return np.asarray(out)


def _warp_nearest_u8(cnp.uint8_t[:, :, ::1] src, inv, int out_h, int out_w):
    cdef double a00 = inv[0][0], a01 = inv[0][1], a02 = inv[0][2]
    cdef double a10 = inv[1][0], a11 = inv[1][1], a12 = inv[1][2]
    cdef int h = src.shape[0], w = src.shape[1], nc = src.shape[2]
    out = np.zeros((out_h, out_w, nc), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] o = out
    cdef int r, c, ch, ix, iy
    cdef double sx, sy
    with nogil:
        for r in range(out_h):
            for c in range(out_w):
                sx = a00 * c + a01 * r + a02
                sy = a10 * c + a11 * r + a12
                ix = <int>floor(sx + 0.5)
                iy = <int>floor(sy + 0.5)
                if ix < 0 or ix >= w or iy < 0 or iy >= h:
                    continue
                for ch in range(nc):
                    o[r, c, ch] = src[iy, ix, ch]
    return out


def _warp_bilinear_u8(cnp.uint8_t[:, :, ::1] src, inv, int out_h, int out_w):
    cdef double a00 = inv[0][0], a01 = inv[0][1], a02 = inv[0][2]
    cdef double a10 = inv[1][0], a11 = inv[1][1], a12 = inv[1][2]
    cdef int h = src.shape[0], w = src.shape[1], nc = src.shape[2]
    out = np.zeros((out_h, out_w, nc), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] o = out
    cdef const cnp.uint8_t* base = &src[0, 0, 0] if h > 0 and w > 0 and nc > 0 else NULL
    cdef cnp.uint8_t* dst = &o[0, 0, 0] if out_h > 0 and out_w > 0 and nc > 0 else NULL
    cdef const cnp.uint8_t* p00
    cdef const cnp.uint8_t* p01
    cdef const cnp.uint8_t* p10
    cdef const cnp.uint8_t* p11
    cdef int r, c, ch, x0, y0, x1, y1
    cdef Py_ssize_t rs = w * nc
    cdef double sx, sy, fx, fy, gx, gy, v, ry, rx
    cdef double eps = 1e-9
    if base == NULL or dst == NULL:
        return out
    with nogil:
        for r in range(out_h):
            # same operation order as the numpy fallback: a*c + b*r + t
            rx = a01 * r
            ry = a11 * r
            for c in range(out_w):
                sx = a00 * c + rx + a02
                sy = a10 * c + ry + a12
                if sx < -eps or sx > w - 1 + eps or sy < -eps or sy > h - 1 + eps:
                    continue
                if sx < 0:
                    sx = 0
                if sx > w - 1:
                    sx = w - 1
                if sy < 0:
                    sy = 0
                if sy > h - 1:
                    sy = h - 1
                # sx, sy >= 0 here, so truncation is floor
                x0 = <int>sx
                y0 = <int>sy
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                y1 = y0 + 1 if y0 + 1 < h else h - 1
                fx = sx - x0
                fy = sy - y0
                gx = 1 - fx
                gy = 1 - fy
                p00 = base + y0 * rs + x0 * nc
                p01 = base + y0 * rs + x1 * nc
                p10 = base + y1 * rs + x0 * nc
                p11 = base + y1 * rs + x1 * nc
                for ch in range(nc):
                    v = (p00[ch] * gx * gy
                         + p01[ch] * fx * gy
                         + p10[ch] * gx * fy
                         + p11[ch] * fx * fy)
                    # v >= 0: truncating v + 0.5 rounds half up like floor
                    v = v + 0.5
                    dst[(r * out_w + c) * nc + ch] = 255 if v >= 255 else <cnp.uint8_t><int>v
    return out


def _as_u8_3d(src):
    arr = np.ascontiguousarray(src)
    if arr.dtype == np.bool_:
        arr = arr.view(np.uint8)
    if arr.ndim == 2:
        return arr[:, :, None], True
    return arr, False


def warp_nearest(src, inv, int out_h, int out_w):
    arr, squeeze = _as_u8_3d(src)
    out = _warp_nearest_u8(np.ascontiguousarray(arr), inv, out_h, out_w)
    if squeeze:
        out = out[:, :, 0]
    if np.asarray(src).dtype == np.bool_:
        out = out.view(np.bool_)
    return out


def warp_bilinear(src, inv, int out_h, int out_w):
    arr, squeeze = _as_u8_3d(src)
    out = _warp_bilinear_u8(np.ascontiguousarray(arr), inv, out_h, out_w)
    if squeeze:
        out = out[:, :, 0]
    return out
