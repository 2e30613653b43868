"""JSON-lines frame helpers for the external-process protocol.

Requests are ``{"id", "op", "args"}``; responses ``{"id", "ok", "result"}``
or ``{"id", "ok": false, "error"}``. Masks travel as packed bits or RLE (see
:mod:`togkit.maskops`), images as PNG file paths.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from togkit.errors import ProtocolError
from togkit.geometry import GraspRect
from togkit.maskops import decode_mask, encode_mask

OPS = (
    "hello",
    "ping",
    "segment",
    "embed_image",
    "embed_text",
    "embed_pair",
    "classify",
    "affordance_oneshot",
    "affordance_segment",
    "propose_grasps",
)


def dumps_frame(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":")) + "\n"


def parse_frame(line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed frame: {line[:80]!r}") from exc
    if not isinstance(obj, dict) or not isinstance(obj.get("id"), int) or isinstance(obj.get("id"), bool):
        raise ProtocolError(f"frame without integer id: {line[:80]!r}")
    return obj


def parse_response(line: str) -> dict:
    obj = parse_frame(line)
    if not isinstance(obj.get("ok"), bool):
        raise ProtocolError(f"response {obj['id']} lacks boolean 'ok'")
    return obj


def mask_out(m, encoding: str = "bits") -> dict:
    return encode_mask(np.asarray(m, bool), encoding)


def mask_in(d, height: int | None = None, width: int | None = None) -> np.ndarray:
    return decode_mask(d, height, width)


def grasp_out(g: GraspRect) -> dict:
    return g.to_dict()


def grasp_in(d: dict) -> GraspRect:
    return GraspRect.from_dict(d)


class ImageSpool:
    """Writes arrays as PNG files under a private temporary directory."""

    def __init__(self):
        self._dir = tempfile.TemporaryDirectory(prefix="togkit-wire-")
        self._n = 0

    @property
    def root(self) -> Path:
        return Path(self._dir.name)

    def write(self, arr: np.ndarray) -> str:
        from PIL import Image

        a = np.asarray(arr)
        if a.dtype == np.bool_:
            a = a.astype(np.uint8) * 255
        self._n += 1
        path = os.path.join(self._dir.name, f"{self._n:06d}.png")
        Image.fromarray(a.astype(np.uint8)).save(path)
        return path

    def close(self):
        self._dir.cleanup()
