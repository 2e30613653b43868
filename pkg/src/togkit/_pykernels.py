"""Pure-Python / numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` one-for-one and are used when the compiled
extension is unavailable (or ``TOGKIT_PURE_PYTHON=1``). Coordinate
convention throughout: pixel ``(col, row)`` has its center at the integer
point ``(col, row)``.
"""

from __future__ import annotations

import math

import numpy as np

NAME = "python"


def rect_corners(x, y, w, h, theta_deg):
    """Corners of an oriented rectangle, positive signed area order."""
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    # w-axis points (cos, -sin) in image coordinates, h-axis (sin, cos)
    ux, uy = 0.5 * w * c, -0.5 * w * s
    vx, vy = 0.5 * h * s, 0.5 * h * c
    pts = [
        (x - ux - vx, y - uy - vy),
        (x + ux - vx, y + uy - vy),
        (x + ux + vx, y + uy + vy),
        (x - ux + vx, y - uy + vy),
    ]
    if _signed_area(pts) < 0:
        pts.reverse()
    return pts


def _signed_area(pts):
    a = 0.0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        a += x0 * y1 - x1 * y0
    return 0.5 * a


def _clip(subject, clipper):
    # Sutherland-Hodgman; both polygons convex with positive orientation.
    out = subject
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = out
        out = []
        m = len(inp)
        for j in range(m):
            px, py = inp[j]
            qx, qy = inp[(j + 1) % m]
            dp = ex * (py - ay) - ey * (px - ax)
            dq = ex * (qy - ay) - ey * (qx - ax)
            if dp >= 0:
                out.append((px, py))
                if dq < 0:
                    t = dp / (dp - dq)
                    out.append((px + t * (qx - px), py + t * (qy - py)))
            elif dq >= 0:
                t = dp / (dp - dq)
                out.append((px + t * (qx - px), py + t * (qy - py)))
    return out


def rect_iou(a, b):
    """IoU of two ``(x, y, w, h, theta)`` rectangles by convex clipping."""
    pa = rect_corners(*a)
    pb = rect_corners(*b)
    inter_poly = _clip(pa, pb)
    inter = _signed_area(inter_poly) if len(inter_poly) >= 3 else 0.0
    if inter <= 0.0:
        return 0.0
    union = a[2] * a[3] + b[2] * b[3] - inter
    if union <= 0.0:
        return 0.0
    iou = inter / union
    # round-off from clipping coincident edges
    return 1.0 if iou > 1.0 - 1e-12 else iou


def rect_iou_many(a, bs):
    bs = np.asarray(bs, dtype=np.float64).reshape(-1, 5)
    a = tuple(float(v) for v in a)
    return np.array([rect_iou(a, tuple(row)) for row in bs.tolist()], dtype=np.float64)


def fill_ring(out, ring):
    """XOR-fill one closed ring into ``out`` (uint8, HxW) by even-odd rule.

    A pixel is inside iff its center has an odd crossing number; edges use
    the half-open rule so shared edges are counted once.
    """
    ring = np.asarray(ring, dtype=np.float64)
    h, w = out.shape
    xs = ring[:, 0]
    ys = ring[:, 1]
    xe = np.roll(xs, -1)
    ye = np.roll(ys, -1)
    r0 = max(0, int(math.ceil(ys.min())))
    r1 = min(h - 1, int(math.floor(ys.max())))
    for r in range(r0, r1 + 1):
        cross = (ys > r) != (ye > r)
        if not cross.any():
            continue
        x0 = xs[cross]
        y0 = ys[cross]
        x1 = xe[cross]
        y1 = ye[cross]
        xi = np.sort(x0 + (r - y0) * (x1 - x0) / (y1 - y0))
        for k in range(0, len(xi) - 1, 2):
            c0 = max(0, int(math.ceil(xi[k])))
            c1 = min(w, int(math.ceil(xi[k + 1])))
            if c1 > c0:
                out[r, c0:c1] ^= 1
    return out


def _source_coords(inv, out_h, out_w):
    cols = np.arange(out_w, dtype=np.float64)[None, :]
    rows = np.arange(out_h, dtype=np.float64)[:, None]
    sx = inv[0][0] * cols + inv[0][1] * rows + inv[0][2]
    sy = inv[1][0] * cols + inv[1][1] * rows + inv[1][2]
    return sx, sy


def warp_nearest(src, inv, out_h, out_w):
    """Inverse-map warp with nearest sampling; ``inv`` maps out (c, r) -> src (c, r)."""
    src = np.ascontiguousarray(src)
    sx, sy = _source_coords(inv, out_h, out_w)
    ix = np.floor(sx + 0.5).astype(np.int64)
    iy = np.floor(sy + 0.5).astype(np.int64)
    h, w = src.shape[:2]
    valid = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    out = np.zeros((out_h, out_w) + src.shape[2:], dtype=src.dtype)
    out[valid] = src[iy[valid], ix[valid]]
    return out


def warp_bilinear(src, inv, out_h, out_w):
    """Inverse-map warp with bilinear sampling; outside the frame is zero."""
    src = np.ascontiguousarray(src)
    sx, sy = _source_coords(inv, out_h, out_w)
    h, w = src.shape[:2]
    eps = 1e-9
    valid = (sx >= -eps) & (sx <= w - 1 + eps) & (sy >= -eps) & (sy <= h - 1 + eps)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    s = src.astype(np.float64)
    if s.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    val = (
        s[y0, x0] * (1 - fx) * (1 - fy)
        + s[y0, x1] * fx * (1 - fy)
        + s[y1, x0] * (1 - fx) * fy
        + s[y1, x1] * fx * fy
    )
    vmask = valid[..., None] if s.ndim == 3 else valid
    val = np.where(vmask, val, 0.0)
    if np.issubdtype(src.dtype, np.integer):
        info = np.iinfo(src.dtype)
        val = np.clip(np.floor(val + 0.5), info.min, info.max)
    return val.astype(src.dtype)
