"""Binary mask algebra, polygon rasterization and mask wire encodings.

Masks are plain ``numpy`` boolean arrays of shape ``(height, width)``; the
functions here validate shapes and never mutate their inputs.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field

import numpy as np

from togkit import kernels
from togkit.errors import EmptyFirstOperand, EmptyMask, MalformedPolygon, MaskDecodeError, ShapeMismatch

DEFAULT_HEIGHT = 480
DEFAULT_WIDTH = 640


def as_mask(m) -> np.ndarray:
    a = np.asarray(m)
    if a.ndim != 2:
        raise ShapeMismatch(f"mask must be 2-D, got shape {a.shape}")
    return a if a.dtype == np.bool_ else a.astype(bool)


def empty_mask(height: int = DEFAULT_HEIGHT, width: int = DEFAULT_WIDTH) -> np.ndarray:
    return np.zeros((height, width), dtype=bool)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = as_mask(a), as_mask(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mask_area(m) -> int:
    return int(np.count_nonzero(as_mask(m)))


def mask_and(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    return a & b


def mask_or(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    return a | b


def mask_sub(a, b) -> np.ndarray:
    """Set difference ``a \\ b``."""
    a, b = _pair(a, b)
    return a & ~b


def overlap_ratio(a, b) -> float:
    """Fraction of ``a`` covered by ``b``: ``|a & b| / |a|`` (asymmetric)."""
    a, b = _pair(a, b)
    na = np.count_nonzero(a)
    if na == 0:
        raise EmptyFirstOperand("overlap_ratio with an empty first mask")
    return np.count_nonzero(a & b) / na


def mask_iou(a, b) -> float:
    """``|a & b| / |a | b|``; two empty masks give 0.0."""
    a, b = _pair(a, b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def mask_bbox(m) -> tuple[int, int, int, int]:
    """Tight inclusive box ``(x0, y0, x1, y1)`` over the set pixels."""
    m = as_mask(m)
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        raise EmptyMask("bounding box of an empty mask")
    cols = np.flatnonzero(m.any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])


def mask_centroid(m) -> tuple[float, float]:
    """Mean ``(x, y)`` of the set pixels."""
    m = as_mask(m)
    ys, xs = np.nonzero(m)
    if xs.size == 0:
        raise EmptyMask("centroid of an empty mask")
    return float(xs.mean()), float(ys.mean())


def intersection_matrix(masks) -> np.ndarray:
    """``out[i, j] = |masks[i] & masks[j]|`` for a list of equal-shape masks."""
    if len(masks) == 0:
        return np.zeros((0, 0), dtype=np.int64)
    flat = np.stack([as_mask(m).ravel() for m in masks]).astype(np.float32)
    # float32 sums are exact up to 2**24 set pixels
    return np.rint(flat @ flat.T).astype(np.int64)


# --- polygons -------------------------------------------------------------


def _ring_array(ring) -> np.ndarray:
    arr = np.asarray(ring, dtype=np.float64)
    if arr.ndim == 1:
        if arr.size % 2:
            raise MalformedPolygon(f"flat ring has odd length {arr.size}")
        arr = arr.reshape(-1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise MalformedPolygon(f"ring must be a point list, got shape {arr.shape}")
    if arr.shape[0] < 3:
        raise MalformedPolygon(f"ring has {arr.shape[0]} points, need at least 3")
    if not np.isfinite(arr).all():
        raise MalformedPolygon("ring has non-finite coordinates")
    return arr


@dataclass(frozen=True)
class PolygonRegion:
    """Outer rings (filled) and hole rings (cleared), image coordinates."""

    outers: tuple = field(default_factory=tuple)
    holes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "outers", tuple(_ring_array(r) for r in self.outers))
        object.__setattr__(self, "holes", tuple(_ring_array(r) for r in self.holes))

    def to_json(self) -> dict:
        return {
            "polygons": [r.ravel().tolist() for r in self.outers],
            "holes": [r.ravel().tolist() for r in self.holes],
        }

    @classmethod
    def from_json(cls, d: dict) -> PolygonRegion:
        return cls(tuple(d.get("polygons", ())), tuple(d.get("holes", ()) or ()))

    def __eq__(self, other):
        if not isinstance(other, PolygonRegion):
            return NotImplemented
        return self.to_json() == other.to_json()

    def __hash__(self):
        return hash(repr(self.to_json()))


def _fill(rings, height: int, width: int) -> np.ndarray:
    acc = np.zeros((height, width), dtype=bool)
    for ring in rings:
        buf = np.zeros((height, width), dtype=np.uint8)
        kernels.fill_ring(buf, ring)
        acc |= buf.astype(bool)
    return acc


def rasterize(region: PolygonRegion, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT) -> np.ndarray:
    """Pixel-center even-odd fill: union of outer rings minus union of holes."""
    if not isinstance(region, PolygonRegion):
        region = PolygonRegion(*region)
    out = _fill(region.outers, height, width)
    if region.holes:
        out &= ~_fill(region.holes, height, width)
    return out


# --- wire encodings -------------------------------------------------------


def mask_to_rle(m) -> dict:
    """Uncompressed row-major run lengths, first run counts zeros."""
    m = as_mask(m)
    flat = m.ravel().astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts
    return {"encoding": "rle", "height": m.shape[0], "width": m.shape[1], "counts": counts}


def rle_to_mask(d: dict) -> np.ndarray:
    h, w = int(d["height"]), int(d["width"])
    counts = np.asarray(d["counts"], dtype=np.int64)
    if (counts < 0).any() or counts.sum() != h * w:
        raise MaskDecodeError(f"RLE counts sum to {int(counts.sum())}, expected {h * w}")
    values = np.arange(counts.size) % 2 == 1
    return np.repeat(values, counts).reshape(h, w)


def mask_to_bits(m) -> dict:
    """Row-major packed bits (MSB first), base64 encoded."""
    m = as_mask(m)
    data = base64.b64encode(np.packbits(m.ravel()).tobytes()).decode("ascii")
    return {"encoding": "bits", "height": m.shape[0], "width": m.shape[1], "data": data}


def bits_to_mask(d: dict) -> np.ndarray:
    h, w = int(d["height"]), int(d["width"])
    try:
        raw = base64.b64decode(d["data"], validate=True)
    except (ValueError, TypeError) as exc:
        raise MaskDecodeError(f"bad base64 mask data: {exc}") from exc
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
    if bits.size < h * w or bits.size - h * w >= 8:
        raise MaskDecodeError(f"bit payload of {bits.size} bits does not fit {h}x{w}")
    return bits[: h * w].astype(bool).reshape(h, w)


def encode_mask(m, encoding: str = "bits") -> dict:
    if encoding == "bits":
        return mask_to_bits(m)
    if encoding == "rle":
        return mask_to_rle(m)
    raise MaskDecodeError(f"unknown mask encoding {encoding!r}")


def decode_mask(d: dict, height: int | None = None, width: int | None = None) -> np.ndarray:
    """Decode any supported wire form: ``bits``, ``rle`` or ``polygons``."""
    if not isinstance(d, dict):
        raise MaskDecodeError(f"mask must be an object, got {type(d).__name__}")
    enc = d.get("encoding")
    if enc is None and "polygons" in d:
        enc = "polygons"
    try:
        if enc == "bits":
            return bits_to_mask(d)
        if enc == "rle":
            return rle_to_mask(d)
        if enc == "polygons":
            h = int(d.get("height", height or DEFAULT_HEIGHT))
            w = int(d.get("width", width or DEFAULT_WIDTH))
            return rasterize(PolygonRegion.from_json(d), w, h)
    except KeyError as exc:
        raise MaskDecodeError(f"mask object missing field {exc}") from exc
    raise MaskDecodeError(f"unknown mask encoding {enc!r}")
