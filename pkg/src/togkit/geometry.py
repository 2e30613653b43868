"""Oriented grasp rectangles and the crop / rotate transforms around them.

Conventions used everywhere in togkit:

* image coordinates, ``x`` = column, ``y`` = row, pixel centers at integers;
* angles in degrees, positive = counterclockwise as displayed (y down);
* a grasp's ``w`` axis points along ``(cos t, -sin t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from togkit import kernels
from togkit.errors import DegenerateBox, InvariantViolation, NonSquareCrop

DEFAULT_CROP_SIDE = 256


def wrap_angle(theta: float) -> float:
    """Map any angle onto the grasp half-circle ``(-90, 90]``."""
    t = math.fmod(theta, 180.0)
    if t > 90.0:
        t -= 180.0
    elif t <= -90.0:
        t += 180.0
    return t


@dataclass(frozen=True)
class GraspRect:
    """Planar parallel-jaw grasp ``(x, y, w, h, theta)`` with optional confidence.

    ``theta`` must lie in ``[-90, 90]``; ``-90`` is stored as ``90`` since the
    two describe the same grasp.
    """

    x: float
    y: float
    w: float
    h: float
    theta: float
    confidence: float | None = None

    def __post_init__(self):
        for name in ("x", "y", "w", "h", "theta"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InvariantViolation(f"grasp {name} is not finite: {v!r}")
        if self.w <= 0 or self.h <= 0:
            raise InvariantViolation(f"grasp sides must be positive, got w={self.w}, h={self.h}")
        if not -90.0 <= self.theta <= 90.0:
            raise InvariantViolation(f"grasp theta {self.theta} outside [-90, 90]")
        if self.theta == -90.0:
            object.__setattr__(self, "theta", 90.0)
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise InvariantViolation(f"grasp confidence {self.confidence} outside [0, 1]")

    @property
    def params(self) -> tuple[float, float, float, float, float]:
        return (self.x, self.y, self.w, self.h, self.theta)

    @property
    def center_pixel(self) -> tuple[int, int]:
        """Rounded ``(col, row)`` of the grasp center (halves round up)."""
        return int(math.floor(self.x + 0.5)), int(math.floor(self.y + 0.5))

    def with_confidence(self, confidence: float | None) -> GraspRect:
        return replace(self, confidence=confidence)

    def to_dict(self) -> dict:
        d = {"x": self.x, "y": self.y, "w": self.w, "h": self.h, "theta": self.theta}
        if self.confidence is not None:
            d["confidence"] = self.confidence
        return d

    @classmethod
    def from_dict(cls, d: dict) -> GraspRect:
        return cls(
            float(d["x"]),
            float(d["y"]),
            float(d["w"]),
            float(d["h"]),
            float(d["theta"]),
            None if d.get("confidence") is None else float(d["confidence"]),
        )


def rect_corners(g: GraspRect) -> np.ndarray:
    """Four corners as a ``(4, 2)`` array, positively oriented in (x, y)."""
    return np.array(kernels.rect_corners(g.x, g.y, g.w, g.h, g.theta), dtype=np.float64)


def rotated_iou(a: GraspRect, b: GraspRect) -> float:
    """Exact IoU of two oriented rectangles (convex clipping + shoelace)."""
    return kernels.rect_iou(a.params, b.params)


def rotated_iou_many(a: GraspRect, bs: list[GraspRect]) -> np.ndarray:
    if not bs:
        return np.zeros(0)
    return kernels.rect_iou_many(a.params, [g.params for g in bs])


def angle_diff(theta_a: float, theta_b: float) -> float:
    """Angular distance between two grasp orientations, in ``[0, 90]``."""
    d = abs(theta_a - theta_b) % 180.0
    return min(d, 180.0 - d)


def similarity_grasp(
    g: GraspRect,
    angle: float,
    scale: float,
    src_center: tuple[float, float],
    dst_center: tuple[float, float],
) -> GraspRect:
    """Move a grasp by rotation ``angle`` (deg, CCW) and ``scale`` about
    ``src_center``, then translate ``src_center`` onto ``dst_center``."""
    t = math.radians(angle)
    c, s = math.cos(t), math.sin(t)
    dx, dy = g.x - src_center[0], g.y - src_center[1]
    x = dst_center[0] + scale * (c * dx + s * dy)
    y = dst_center[1] + scale * (-s * dx + c * dy)
    return GraspRect(x, y, g.w * scale, g.h * scale, wrap_angle(g.theta + angle), g.confidence)


def similarity_inverse_map(
    angle: float,
    scale: float,
    src_center: tuple[float, float],
    dst_center: tuple[float, float],
) -> list[list[float]]:
    """2x3 matrix mapping destination pixel (c, r) back into the source.

    Inverse of the transform applied by :func:`similarity_grasp`.
    """
    t = math.radians(angle)
    c, s = math.cos(t), math.sin(t)
    k = 1.0 / scale
    # src = src_center + k * R(-angle) (dst - dst_center), R in image coords
    a00, a01 = k * c, -k * s
    a10, a11 = k * s, k * c
    return [
        [a00, a01, src_center[0] - a00 * dst_center[0] - a01 * dst_center[1]],
        [a10, a11, src_center[1] - a10 * dst_center[0] - a11 * dst_center[1]],
    ]


@dataclass(frozen=True)
class CropTransform:
    """Crop a bounding box, scale its longest side to ``side`` and center-pad.

    ``bbox`` is ``(x0, y0, x1, y1)`` in pixel indices with exclusive ends.
    """

    bbox: tuple[int, int, int, int]
    scale: float
    pad: tuple[int, int]
    side: int = DEFAULT_CROP_SIDE

    def forward(self, pts) -> np.ndarray:
        """Image points (x, y) -> crop points."""
        p = np.asarray(pts, dtype=np.float64)
        x0, y0 = self.bbox[0], self.bbox[1]
        out = np.empty_like(p)
        out[..., 0] = (p[..., 0] + 0.5 - x0) * self.scale + self.pad[0] - 0.5
        out[..., 1] = (p[..., 1] + 0.5 - y0) * self.scale + self.pad[1] - 0.5
        return out

    def inverse(self, pts) -> np.ndarray:
        """Crop points -> image points."""
        p = np.asarray(pts, dtype=np.float64)
        x0, y0 = self.bbox[0], self.bbox[1]
        out = np.empty_like(p)
        out[..., 0] = (p[..., 0] + 0.5 - self.pad[0]) / self.scale + x0 - 0.5
        out[..., 1] = (p[..., 1] + 0.5 - self.pad[1]) / self.scale + y0 - 0.5
        return out

    def _src_index(self, n: int, lo: int, hi: int, pad: int) -> tuple[np.ndarray, np.ndarray]:
        q = np.arange(n, dtype=np.float64)
        src = np.floor((q + 0.5 - pad) / self.scale + lo).astype(np.int64)
        valid = (src >= lo) & (src < hi)
        return np.clip(src, lo, hi - 1), valid

    def crop(self, raster: np.ndarray) -> np.ndarray:
        """Resample ``raster`` (HxW or HxWxC) into the ``side``-square crop."""
        x0, y0, x1, y1 = self.bbox
        h, w = raster.shape[:2]
        cols, cv = self._src_index(self.side, x0, min(x1, w), self.pad[0])
        rows, rv = self._src_index(self.side, y0, min(y1, h), self.pad[1])
        out = raster[np.ix_(rows, cols)].copy()
        keep = rv[:, None] & cv[None, :]
        out[~keep] = 0
        return out

    def uncrop(self, crop: np.ndarray, height: int, width: int) -> np.ndarray:
        """Inverse of :meth:`crop`: paste a crop back at full resolution."""
        if crop.shape[0] != self.side or crop.shape[1] != self.side:
            raise NonSquareCrop(f"expected {self.side}x{self.side} crop, got {crop.shape[:2]}")
        x0, y0, x1, y1 = self.bbox
        x1, y1 = min(x1, width), min(y1, height)
        out = np.zeros((height, width) + crop.shape[2:], dtype=crop.dtype)
        px = np.arange(x0, x1, dtype=np.float64)
        py = np.arange(y0, y1, dtype=np.float64)
        qx = np.clip(np.floor((px + 0.5 - x0) * self.scale + self.pad[0]).astype(np.int64), 0, self.side - 1)
        qy = np.clip(np.floor((py + 0.5 - y0) * self.scale + self.pad[1]).astype(np.int64), 0, self.side - 1)
        out[y0:y1, x0:x1] = crop[np.ix_(qy, qx)]
        return out

    def to_dict(self) -> dict:
        return {"bbox": list(self.bbox), "scale": self.scale, "pad": list(self.pad), "side": self.side}


def make_crop_transform(bbox, target_side: int = DEFAULT_CROP_SIDE, image_shape=None) -> CropTransform:
    """Build the crop-and-pad transform for ``bbox`` (exclusive-end pixels).

    The longest side is scaled to ``target_side`` with aspect ratio preserved
    and the content centered; ``image_shape`` (h, w) optionally bounds-checks.
    """
    x0, y0, x1, y1 = (int(v) for v in bbox)
    bw, bh = x1 - x0, y1 - y0
    if bw <= 0 or bh <= 0:
        raise DegenerateBox(f"degenerate bounding box {tuple(bbox)}")
    if image_shape is not None:
        h, w = image_shape[:2]
        if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
            raise DegenerateBox(f"bounding box {tuple(bbox)} outside image {w}x{h}")
    scale = target_side / max(bw, bh)
    cw = min(target_side, int(round(bw * scale)))
    ch = min(target_side, int(round(bh * scale)))
    return CropTransform((x0, y0, x1, y1), scale, ((target_side - cw) // 2, (target_side - ch) // 2), target_side)


def rotation_inverse_map(degrees: float, side: int) -> list[list[float]]:
    """Inverse map for a CCW rotation about the center of a ``side`` square."""
    c0 = (side - 1) / 2.0
    return similarity_inverse_map(degrees, 1.0, (c0, c0), (c0, c0))


def rotate_crop(raster: np.ndarray, degrees: int, interpolation: str | None = None) -> np.ndarray:
    """Rotate a square crop CCW about its center; out-of-frame pixels are zero.

    Boolean rasters use nearest sampling, anything else bilinear, unless
    ``interpolation`` ("nearest" / "bilinear") says otherwise. Quarter turns
    are exact index permutations.
    """
    if raster.ndim < 2 or raster.shape[0] != raster.shape[1]:
        raise NonSquareCrop(f"rotate_crop needs a square crop, got {raster.shape[:2]}")
    deg = int(degrees) % 360
    if deg == 0:
        return raster.copy()
    if deg % 90 == 0:
        return np.ascontiguousarray(np.rot90(raster, deg // 90))
    if interpolation is None:
        interpolation = "nearest" if raster.dtype == np.bool_ else "bilinear"
    inv = rotation_inverse_map(deg, raster.shape[0])
    n = raster.shape[0]
    if interpolation == "nearest":
        return kernels.warp_nearest(raster, inv, n, n)
    if interpolation == "bilinear":
        return kernels.warp_bilinear(raster, inv, n, n)
    raise ValueError(f"unknown interpolation {interpolation!r}")
