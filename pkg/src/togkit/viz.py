"""PNG overlays of pipeline intermediates, used by trace dumps."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from togkit.geometry import GraspRect, rect_corners

# fixed palette so dumps are byte-identical across runs
PALETTE = np.array(
    [
        [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48],
        [145, 30, 180], [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 212],
    ],
    dtype=np.float64,
)
TRACE_FILES = ("01_segments.png", "02_filtered.png", "03_candidate.png", "04_region.png", "05_grasp.png")


def overlay_masks(image, masks, alpha: float = 0.5, colors=None) -> np.ndarray:
    """Blend each mask's color into ``image`` (later masks on top)."""
    out = np.asarray(image, dtype=np.float64).copy()
    if out.ndim == 2:
        out = np.repeat(out[..., None], 3, axis=2)
    for i, m in enumerate(masks):
        c = PALETTE[i % len(PALETTE)] if colors is None else np.asarray(colors[i], dtype=np.float64)
        m = np.asarray(m, dtype=bool)
        out[m] = (1 - alpha) * out[m] + alpha * c
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def draw_grasps(image, grasps: list[GraspRect], highlight: int | None = None) -> np.ndarray:
    """Grasp rectangles; jaw edges (the ``h`` sides) drawn thicker."""
    im = Image.fromarray(np.asarray(image, dtype=np.uint8))
    dr = ImageDraw.Draw(im)
    for i, g in enumerate(grasps):
        color = (255, 0, 0) if i == highlight else (0, 0, 255)
        pts = [tuple(map(float, p)) for p in rect_corners(g)]
        for k in range(4):
            dr.line([pts[k], pts[(k + 1) % 4]], fill=color, width=3 if k % 2 else 1)
        cx, cy = g.center_pixel
        dr.ellipse([cx - 2, cy - 2, cx + 2, cy + 2], fill=color)
    return np.asarray(im)


def save_png(array, path) -> Path:
    path = Path(path)
    # no metadata chunks, so output bytes depend only on pixels
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path, format="PNG", optimize=False)
    return path


def dump_trace(result, image, out_dir) -> list[Path]:
    """Write one overlay per stage plus ``trace.json``; returns the written paths.

    Stages without output (after a failure) get a plain copy of the image so
    the directory layout is always the same.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    image = np.asarray(image)
    empty = []
    frames = [
        overlay_masks(image, result.segments or empty),
        overlay_masks(image, result.kept_masks or empty),
        overlay_masks(image, [result.candidate] if result.candidate is not None else empty),
        overlay_masks(image, [result.region] if result.region is not None else empty, colors=[(60, 180, 75)]),
    ]
    g = overlay_masks(image, [result.region] if result.region is not None else empty, colors=[(60, 180, 75)])
    frames.append(draw_grasps(g, result.grasp_candidates, result.grasp_index))
    paths = [save_png(f, out / name) for f, name in zip(frames, TRACE_FILES)]
    log = out / "trace.json"
    log.write_text(json.dumps(result.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return paths + [log]
