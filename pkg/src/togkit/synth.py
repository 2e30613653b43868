"""Deterministic synthetic tabletop dataset used as the test fixture.

Objects are assembled from rectangular or polygonal parts, each part labelled
with one affordance and carrying one grasp at its center, so that every task
region of every object contains at least one annotated grasp. Scenes place
rotated objects on a textured table without overlap; reference images hold
one upright object in the middle of the frame.

``python -m togkit.synth OUT_DIR [--mini]`` writes ``manifest.json`` and
the PNG images.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from togkit.dataset.model import dumps_manifest, load_dataset, save_dataset
from togkit.dataset.rules import DEFAULT_RULES
from togkit.geometry import GraspRect, similarity_grasp
from togkit.maskops import PolygonRegion, rasterize

WIDTH, HEIGHT = 640, 480
GRASP_H = 14.0


@dataclass(frozen=True)
class Part:
    affordance: str
    outer: tuple  # local (x, y) vertices
    holes: tuple = ()
    grasp_at: tuple = (0.0, 0.0)
    opening: float = 40.0  # gripper opening across the part


def _rect(x0, y0, x1, y1):
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))


def _box(aff, x0, y0, x1, y1, holes=(), grasp_at=None):
    g = grasp_at or ((x0 + x1) / 2, (y0 + y1) / 2)
    return Part(aff, _rect(x0, y0, x1, y1), holes, g, (y1 - y0) + 16.0)


# category -> subcategory -> parts; subcategories vary proportions
CATALOG: dict[str, dict[str, tuple[Part, ...]]] = {
    "hammer": {
        "hammer_01": (_box("grasp", -80, -12, 30, 12), _box("hit", 30, -40, 66, 40)),
        "hammer_02": (_box("grasp", -95, -10, 20, 10), _box("hit", 20, -32, 50, 32)),
        "hammer_03": (_box("grasp", -70, -14, 35, 14), _box("hit", 35, -46, 80, 20)),
    },
    "scissors": {
        "scissors_01": (
            _box("grasp", -70, -30, -10, 30, holes=(_rect(-62, -24, -44, -6), _rect(-62, 6, -44, 24)), grasp_at=(-25, 0)),
            Part("cut", ((-10, -14), (80, -3), (80, 3), (-10, 14)), (), (25, 0), 40.0),
        ),
        "scissors_02": (
            _box("grasp", -60, -34, -4, 34, holes=(_rect(-52, -28, -30, -8), _rect(-52, 8, -30, 28)), grasp_at=(-18, 0)),
            Part("cut", ((-4, -16), (96, -4), (96, 4), (-4, 16)), (), (30, 0), 42.0),
        ),
    },
    "cable": {
        "cable_01": (_box("grasp", -75, -10, 20, 10), _box("connect", 20, -17, 62, 17)),
    },
    "paint_brush": {
        "paint_brush_01": (_box("grasp", -85, -10, 10, 10), _box("paint", 10, -18, 62, 18)),
    },
    "screwdriver": {
        "screwdriver_01": (_box("grasp", -70, -16, 0, 16), _box("screw", 0, -7, 75, 7)),
    },
    "dustpan": {
        "dustpan_01": (_box("grasp", -95, -10, -30, 10), Part("contain", ((-30, -40), (60, -55), (60, 55), (-30, 40)), (), (15, 0), 96.0)),
    },
    "toothpaste": {
        "toothpaste_01": (_box("grasp", -60, -22, 40, 22), _box("open", 40, -12, 64, 12)),
    },
    "spatula": {
        "spatula_01": (_box("grasp", -85, -10, 0, 10), _box("support", 0, -28, 60, 28)),
    },
    "pen": {
        "pen_01": (_box("grasp", -70, -10, 40, 10), Part("write", ((40, -10), (72, -4), (72, 4), (40, 10)), (), (52, 0), 36.0)),
    },
}

AFFORDANCES = ("connect", "contain", "cut", "grasp", "hit", "open", "paint", "screw", "support", "write")

_ADJ = {
    "hammer_01": "steel claw hammer with a black rubber handle",
    "hammer_02": "light tack hammer with a long thin wooden handle",
    "hammer_03": "heavy mallet with an offset square head",
    "scissors_01": "office scissors with round red finger loops",
    "scissors_02": "kitchen scissors with wide blue loops and long blades",
    "cable_01": "short charging cable with a chunky plug",
    "paint_brush_01": "flat paint brush with light bristles and a wooden handle",
    "screwdriver_01": "flat-head screwdriver with a thick yellow grip",
    "dustpan_01": "plastic dustpan with a short straight handle",
    "toothpaste_01": "toothpaste tube with a white flip cap",
    "spatula_01": "nylon spatula with a broad slotted blade",
    "pen_01": "ballpoint pen with a pointed metal tip",
}

_AFF_COLOR = {
    "grasp": (60, 60, 70),
    "hit": (150, 150, 160),
    "cut": (190, 190, 200),
    "connect": (200, 170, 40),
    "paint": (230, 210, 160),
    "screw": (170, 170, 175),
    "contain": (40, 120, 200),
    "open": (245, 245, 245),
    "support": (220, 90, 60),
    "write": (120, 80, 40),
}


def category_of(object_id: str) -> str:
    for cat, subs in CATALOG.items():
        if object_id in subs:
            return cat
    raise KeyError(object_id)


def _place(pts, phi, cx, cy):
    t = math.radians(phi)
    c, s = math.cos(t), math.sin(t)
    return [(round(cx + c * x + s * y, 3), round(cy - s * x + c * y, 3)) for x, y in pts]


def _flat(pts):
    return [v for p in pts for v in p]


def _object_record(object_id, phi, cx, cy):
    """Polygons, rasters and grasps of one placed object."""
    parts = CATALOG[category_of(object_id)][object_id]
    affs, obj = {}, np.zeros((HEIGHT, WIDTH), bool)
    aff_src, grasps, outers, holes = {}, [], [], []
    for part in parts:
        outer = _flat(_place(part.outer, phi, cx, cy))
        hs = [_flat(_place(h, phi, cx, cy)) for h in part.holes]
        m = rasterize(PolygonRegion([outer], hs), WIDTH, HEIGHT)
        affs[part.affordance] = affs.get(part.affordance, np.zeros_like(m)) | m
        aff_src[part.affordance] = {"polygons": [outer], "holes": hs}
        outers.append(outer)
        holes.extend(hs)
        obj |= m
        local = GraspRect(part.grasp_at[0], part.grasp_at[1], part.opening, GRASP_H, 90.0)
        g = similarity_grasp(local, phi, 1.0, (0.0, 0.0), (cx, cy))
        g = GraspRect(round(g.x, 3), round(g.y, 3), g.w, g.h, round(g.theta, 3))
        px, py = g.center_pixel
        if not m[py, px]:
            raise AssertionError(f"grasp of {object_id}/{part.affordance} not on its part")
        grasps.append(g)
    return obj, affs, aff_src, grasps, {"polygons": outers, "holes": holes}


def _render(objects, rng) -> np.ndarray:
    img = np.empty((HEIGHT, WIDTH, 3), np.float64)
    img[:] = (205, 200, 190)
    # smooth lighting gradient, random per image
    gy, gx = np.mgrid[0:HEIGHT, 0:WIDTH] / max(HEIGHT, WIDTH)
    a, b = rng.uniform(-12, 12, 2)
    img += (a * gx + b * gy)[..., None]
    for object_id, _, affs in objects:
        shade = 0.8 + 0.4 * (sum(map(ord, object_id)) % 7) / 6
        for name, m in affs.items():
            col = np.clip(np.array(_AFF_COLOR[name]) * shade, 0, 255)
            img[m] = col
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _save_png(arr, path):
    from PIL import Image

    Image.fromarray(arr).save(path, optimize=False)


def _layout(object_ids, rng, tries=400):
    """Non-overlapping random poses for ``object_ids``."""
    placed, occupied = [], np.zeros((HEIGHT, WIDTH), bool)
    for oid in object_ids:
        for _ in range(tries):
            phi = float(rng.integers(0, 360))
            cx, cy = float(rng.integers(90, WIDTH - 90)), float(rng.integers(90, HEIGHT - 90))
            rec = _object_record(oid, phi, cx, cy)
            m = rec[0]
            ys, xs = np.nonzero(m)
            if xs.min() < 4 or ys.min() < 4 or xs.max() > WIDTH - 5 or ys.max() > HEIGHT - 5:
                continue
            grown = m.copy()
            for _ in range(6):
                grown[1:] |= grown[:-1].copy()
                grown[:-1] |= grown[1:].copy()
                grown[:, 1:] |= grown[:, :-1].copy()
                grown[:, :-1] |= grown[:, 1:].copy()
            if (grown & occupied).any():
                continue
            occupied |= m
            placed.append((oid, rec))
            break
        else:
            raise RuntimeError(f"could not place {oid}")
    return placed


FULL_SCENES = [
    # (split, object ids)
    ("KC-KSC", ["hammer_01", "scissors_01", "cable_01"]),
    ("KC-KSC", ["paint_brush_01", "screwdriver_01"]),
    ("KC-KSC", ["hammer_01", "cable_01", "paint_brush_01", "screwdriver_01"]),
    ("KC-KSC", ["scissors_01", "screwdriver_01", "cable_01"]),
    ("KC-USC", ["hammer_02", "scissors_02"]),
    ("KC-USC", ["hammer_03", "cable_01", "scissors_02"]),
    ("KC-USC", ["hammer_02", "paint_brush_01", "screwdriver_01"]),
    ("UC-USC", ["dustpan_01", "toothpaste_01", "pen_01"]),
    ("UC-USC", ["spatula_01", "pen_01"]),
    ("UC-USC", ["toothpaste_01", "spatula_01", "dustpan_01", "pen_01"]),
    ("subcategory-KC", ["hammer_01", "hammer_02", "hammer_03"]),
    ("subcategory-KC", ["scissors_01", "scissors_02"]),
    ("train", ["hammer_01", "toothpaste_01"]),
]

MINI_SCENES = [
    ("KC-KSC", ["hammer_01", "cable_01"]),
    ("KC-USC", ["scissors_01", "paint_brush_01"]),
    ("UC-USC", ["hammer_01", "scissors_01"]),
]


def build_fixture(out_dir, scenes=None, seed: int = 7) -> Path:
    """Write images and a canonical ``manifest.json`` into ``out_dir``."""
    scenes = FULL_SCENES if scenes is None else scenes
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    refs = sorted({oid for _, ids in scenes for oid in ids})
    cats = [
        {"id": i + 1, "name": category_of(oid), "subcategory": oid, "description": _ADJ[oid]}
        for i, oid in enumerate(refs)
    ]
    cat_id = {c["subcategory"]: c["id"] for c in cats}
    images, anns = [], []

    def add_image(image_id, file_name, scene_id, split, placed):
        rendered = _render([(oid, rec[0], rec[1]) for oid, rec in placed], rng)
        _save_png(rendered, out / file_name)
        images.append({"id": image_id, "file_name": file_name, "width": WIDTH, "height": HEIGHT, "scene_id": scene_id, "split": split})
        for oid, (obj, affs, aff_src, grasps, obj_src) in placed:
            anns.append({
                "id": len(anns) + 1,
                "image_id": image_id,
                "category_id": cat_id[oid],
                "object_mask": obj_src,
                "affordances": [{"name": k, **aff_src[k]} for k in sorted(aff_src)],
                "grasps": [g.to_dict() for g in grasps],
                "description": _ADJ[oid],
            })

    for i, oid in enumerate(refs):
        add_image(i + 1, f"images/ref_{oid}.png", f"ref_{oid}", "reference", [(oid, _object_record(oid, 0.0, WIDTH / 2, HEIGHT / 2))])
    for j, (split, ids) in enumerate(scenes):
        sid = f"scene_{j + 1:03d}"
        add_image(100 + j, f"images/{sid}.png", sid, split, _layout(ids, rng))

    doc = {
        "info": {"description": "synthetic tabletop fixture", "seed": seed},
        "affordances": list(AFFORDANCES),
        "images": images,
        "categories": cats,
        "annotations": anns,
        "tasks": [r.to_json() for r in DEFAULT_RULES],
    }
    path = out / "manifest.json"
    path.write_text(dumps_manifest(doc), encoding="utf-8")
    # normalize through the writer so the file is in canonical form
    save_dataset(load_dataset(path), path)
    return path


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m togkit.synth", description="Write the synthetic fixture dataset.")
    ap.add_argument("out_dir")
    ap.add_argument("--mini", action="store_true", help="3-scene variant with 4 reference objects")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)
    path = build_fixture(args.out_dir, MINI_SCENES if args.mini else FULL_SCENES, args.seed)
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
