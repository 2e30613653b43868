"""Hot-kernel dispatch.

The compiled ``_ckernels`` extension is used when importable; otherwise the
numpy/pure-Python ``_pykernels`` module. Set ``TOGKIT_PURE_PYTHON=1`` to
force the fallback. ``BACKEND`` names the active implementation.
"""

from __future__ import annotations

import os

import numpy as np

from togkit import _pykernels

_c = None
if os.environ.get("TOGKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from togkit import _ckernels as _c
    except ImportError:  # extension not built
        _c = None

_impl = _c if _c is not None else _pykernels
BACKEND: str = _impl.NAME


def available() -> dict[str, object]:
    """Map of implementation name -> module for every importable backend."""
    out: dict[str, object] = {"python": _pykernels}
    if _c is not None:
        out["cython"] = _c
    else:
        try:
            from togkit import _ckernels

            out["cython"] = _ckernels
        except ImportError:
            pass
    return out


def rect_corners(x, y, w, h, theta_deg):
    return _impl.rect_corners(x, y, w, h, theta_deg)


def rect_iou(a, b) -> float:
    return float(_impl.rect_iou(a, b))


def rect_iou_many(a, bs) -> np.ndarray:
    return _impl.rect_iou_many(a, bs)


def fill_ring(out: np.ndarray, ring) -> np.ndarray:
    return _impl.fill_ring(out, ring)


def _c_ok(src) -> bool:
    return _c is not None and _impl is _c and np.asarray(src).dtype in (np.uint8, np.bool_)


def warp_nearest(src, inv, out_h: int, out_w: int) -> np.ndarray:
    if _c_ok(src):
        return _c.warp_nearest(src, inv, out_h, out_w)
    return _pykernels.warp_nearest(src, inv, out_h, out_w)


def warp_bilinear(src, inv, out_h: int, out_w: int) -> np.ndarray:
    if _c_ok(src) and np.asarray(src).dtype == np.uint8:
        return _c.warp_bilinear(src, inv, out_h, out_w)
    return _pykernels.warp_bilinear(src, inv, out_h, out_w)
