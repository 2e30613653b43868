"""Independent brute-force oracles shared by the test-suite.

Nothing here imports the code paths it is used to check.
"""

from __future__ import annotations

import math

import numpy as np


def rect_contains(px, py, x, y, w, h, theta):
    """Point-in-oriented-rectangle by projection onto the rectangle's axes."""
    t = math.radians(theta)
    u = (math.cos(t), -math.sin(t))
    v = (math.sin(t), math.cos(t))
    dx, dy = px - x, py - y
    return (np.abs(dx * u[0] + dy * u[1]) <= w / 2) & (np.abs(dx * v[0] + dy * v[1]) <= h / 2)


def raster_iou(a, b, samples=500):
    """IoU of two (x, y, w, h, theta) rectangles on a fine midpoint grid."""
    ra = 0.5 * math.hypot(a[2], a[3])
    rb = 0.5 * math.hypot(b[2], b[3])
    x0 = min(a[0] - ra, b[0] - rb)
    x1 = max(a[0] + ra, b[0] + rb)
    y0 = min(a[1] - ra, b[1] - rb)
    y1 = max(a[1] + ra, b[1] + rb)
    xs = x0 + (np.arange(samples) + 0.5) * (x1 - x0) / samples
    ys = y0 + (np.arange(samples) + 0.5) * (y1 - y0) / samples
    gx, gy = np.meshgrid(xs, ys)
    ina = rect_contains(gx, gy, *a)
    inb = rect_contains(gx, gy, *b)
    union = np.count_nonzero(ina | inb)
    return np.count_nonzero(ina & inb) / union if union else 0.0


def point_in_ring(px, py, ring):
    """Crossing-number test for one point against one closed ring."""
    inside = False
    n = len(ring)
    for i in range(n):
        x0, y0 = ring[i]
        x1, y1 = ring[(i + 1) % n]
        if (y0 > py) != (y1 > py):
            xi = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
            if px < xi:
                inside = not inside
    return inside


def raster_region(outers, holes, width, height):
    """Per-pixel-center oracle for outer-minus-hole even-odd fill."""
    out = np.zeros((height, width), dtype=bool)
    for r in range(height):
        for c in range(width):
            inside = any(point_in_ring(c, r, ring) for ring in outers)
            if inside and any(point_in_ring(c, r, ring) for ring in holes):
                inside = False
            out[r, c] = inside
    return out


def rot90_oracle(m):
    """Counterclockwise quarter turn by explicit index permutation."""
    n = m.shape[0]
    out = np.zeros_like(m)
    for i in range(n):
        for j in range(n):
            out[i, j] = m[j, n - 1 - i]
    return out


def brute_ssf(masks, min_area, max_area, tau):
    """Algorithm-level SSF with plain Python loops and the ascending-area order."""
    areas = [int(sum(sum(1 for v in row if v) for row in m.tolist())) for m in masks]
    stage1 = [i for i in range(len(masks)) if min_area < areas[i] < max_area]
    order = sorted(stage1, key=lambda i: (areas[i], i))
    keep = []
    for pos, i in enumerate(order):
        remove = False
        for j in order[pos + 1:]:
            inter = int(np.logical_and(masks[i], masks[j]).sum())
            if inter / areas[i] > tau:
                remove = True
                break
        if not remove:
            keep.append(i)
    return sorted(keep)


def softmax(v):
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max())
    return e / e.sum()


def brute_ap(predictions, gts, thresholds):
    """Mask AP over all sizes with explicit loops.

    Greedy matching per image in descending score (ties: first listed); each
    prediction takes the unmatched GT of highest IoU at or above the threshold,
    ties going to the later GT. Precision at each of 101 recall levels is the
    best precision reached at that recall or beyond.
    """
    def iou(a, b):
        u = np.logical_or(a, b).sum()
        return np.logical_and(a, b).sum() / u if u else 0.0

    out = []
    n_gt = sum(len(g) for g in gts)
    for t in thresholds:
        dets = []
        for img, (preds, gt) in enumerate(zip(predictions, gts)):
            ranked = sorted(range(len(preds)), key=lambda k: (-preds[k][1], k))
            used = [False] * len(gt)
            for rank, k in enumerate(ranked):
                best, best_v = None, None
                for g in range(len(gt)):
                    if used[g]:
                        continue
                    v = iou(preds[k][0], gt[g])
                    if v >= t and (best_v is None or v >= best_v):
                        best, best_v = g, v
                if best is not None:
                    used[best] = True
                dets.append((-preds[k][1], img, rank, best is not None))
        dets.sort()
        if n_gt == 0:
            out.append(None)
            continue
        tp = fp = 0
        curve = []
        for _, _, _, hit in dets:
            tp, fp = tp + hit, fp + (not hit)
            curve.append((tp / n_gt, tp / (tp + fp)))
        total = 0.0
        # recall levels built the way the reference COCO tooling builds them
        for r in np.linspace(0.0, 1.0, 101):
            ps = [p for rec, p in curve if rec >= r]
            total += max(ps) if ps else 0.0
        out.append(total / 101)
    return out
