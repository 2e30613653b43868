"""Dataset types and the COCO-extended manifest reader/writer.

Manifest layout (UTF-8 JSON, paths relative to the manifest file)::

    {
      "info": {...},                       # optional, free-form
      "affordances": ["grasp", ...],
      "images": [{"id", "file_name", "width", "height", "scene_id",
                  "split", "depth_file"?}],
      "categories": [{"id", "name", "subcategory", "description"?,
                      "properties"?}],
      "annotations": [{"id", "image_id", "category_id",
                       "object_mask": MASK,
                       "affordances": [{"name", ...MASK}],
                       "grasps": [{"x", "y", "w", "h", "theta"}],
                       "description"?, "bbox"?, "area"?, "iscrowd"?}],
      "tasks": [{"name", "polarity", "affordance", "categories", "exclude"}]
    }

``MASK`` is either ``{"polygons": [[x1, y1, ...]], "holes": [...]}`` or
``{"rle": {"counts": [...]}}`` (row-major, first run counts zeros). Images
whose ``split`` is ``reference`` form the knowledge base.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from togkit.dataset.rules import TaskRule
from togkit.errors import DanglingReference, InvariantViolation, MalformedPolygon, MaskDecodeError, SchemaError
from togkit.geometry import GraspRect
from togkit.maskops import PolygonRegion, mask_bbox, mask_to_rle, rasterize, rle_to_mask

CATEGORY_SPLITS = ("train", "KC-KSC", "KC-USC", "UC-USC")
SUBCATEGORY_SPLITS = ("subcategory-KC", "subcategory-UC")
REFERENCE_SPLIT = "reference"
SPLITS = CATEGORY_SPLITS + SUBCATEGORY_SPLITS + (REFERENCE_SPLIT,)
SPLIT_GROUPS = {
    "category": ("KC-KSC", "KC-USC", "UC-USC"),
    "subcategory": SUBCATEGORY_SPLITS,
    "test": ("KC-KSC", "KC-USC", "UC-USC") + SUBCATEGORY_SPLITS,
    "all": CATEGORY_SPLITS + SUBCATEGORY_SPLITS,
}

_TOP_REQUIRED = {"images", "categories", "annotations", "tasks", "affordances"}
_TOP_OPTIONAL = {"info"}
_IMAGE_REQUIRED = {"id", "file_name", "width", "height", "scene_id", "split"}
_IMAGE_OPTIONAL = {"depth_file"}
_CAT_REQUIRED = {"id", "name", "subcategory"}
_CAT_OPTIONAL = {"description", "properties", "supercategory"}
_ANN_REQUIRED = {"id", "image_id", "category_id", "object_mask", "affordances", "grasps"}
_ANN_OPTIONAL = {"description", "bbox", "area", "iscrowd", "segmentation"}
_TASK_REQUIRED = {"name", "polarity"}
_TASK_OPTIONAL = {"affordance", "categories", "exclude"}
_GRASP_KEYS = {"x", "y", "w", "h", "theta"}


@dataclass
class SceneObject:
    """One annotated object instance (in a scene or in the reference set)."""

    annotation_id: int
    object_id: str
    category: str
    mask: np.ndarray
    affordances: dict[str, np.ndarray]
    grasps: list[GraspRect]
    description: str = ""
    mask_source: dict | None = None
    affordance_sources: dict[str, dict] = field(default_factory=dict)


@dataclass
class SceneAnnotation:
    scene_id: str
    image_id: int
    image_path: Path
    split: str
    objects: list[SceneObject]
    width: int = 640
    height: int = 480
    depth_path: Path | None = None

    def load_image(self) -> np.ndarray:
        return load_rgb(self.image_path)

    def object(self, object_id: str) -> SceneObject:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)


@dataclass
class KnowledgeEntry:
    """``k_o = (I_o, M_o, F_o, G_o, D_o)`` for one object subcategory."""

    object_id: str
    category: str
    image_path: Path
    mask: np.ndarray
    affordances: dict[str, np.ndarray]
    grasps: list[GraspRect]
    description: str
    properties: dict = field(default_factory=dict)
    scene: SceneAnnotation | None = None

    @cached_property
    def image(self) -> np.ndarray:
        return load_rgb(self.image_path)

    @property
    def key(self) -> str:
        return f"ref:{self.object_id}"


@dataclass
class Category:
    id: int
    name: str
    subcategory: str
    description: str = ""
    properties: dict = field(default_factory=dict)


@dataclass
class Dataset:
    scenes: list[SceneAnnotation]
    references: list[SceneAnnotation]
    categories: list[Category]
    rules: list[TaskRule]
    affordances: tuple[str, ...]
    root: Path = Path(".")
    info: dict = field(default_factory=dict)

    @property
    def tasks(self) -> tuple[str, ...]:
        return tuple(r.task for r in self.rules)

    @cached_property
    def entries(self) -> list[KnowledgeEntry]:
        cats = {c.subcategory: c for c in self.categories}
        out = []
        for ref in self.references:
            for o in ref.objects:
                cat = cats.get(o.object_id)
                out.append(
                    KnowledgeEntry(
                        object_id=o.object_id,
                        category=o.category,
                        image_path=ref.image_path,
                        mask=o.mask,
                        affordances=o.affordances,
                        grasps=o.grasps,
                        description=o.description or (cat.description if cat else ""),
                        properties=dict(cat.properties) if cat else {},
                        scene=ref,
                    )
                )
        return out

    def entry(self, object_id: str) -> KnowledgeEntry:
        for e in self.entries:
            if e.object_id == object_id:
                return e
        raise KeyError(object_id)

    def category_of(self, object_id: str) -> str:
        for c in self.categories:
            if c.subcategory == object_id:
                return c.name
        raise KeyError(object_id)

    def select(self, split: str) -> list[SceneAnnotation]:
        """Scenes in a split tag or split group (``category``, ``all`` ...)."""
        tags = SPLIT_GROUPS.get(split, (split,))
        return [s for s in self.scenes if s.split in tags]


def load_rgb(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB")).copy()


# --- reading --------------------------------------------------------------


def _check_keys(obj, required, optional, what):
    if not isinstance(obj, dict):
        raise SchemaError(f"{what} must be an object")
    missing = required - obj.keys()
    if missing:
        raise SchemaError(f"{what} missing field(s) {sorted(missing)}")
    extra = obj.keys() - required - optional
    if extra:
        raise SchemaError(f"{what} has unknown field(s) {sorted(extra)}")


def _decode_region(obj: dict, width: int, height: int, what: str) -> tuple[np.ndarray, dict]:
    try:
        if "rle" in obj:
            rle = obj["rle"]
            m = rle_to_mask({"height": height, "width": width, "counts": rle["counts"]})
            return m, {"rle": {"counts": list(rle["counts"])}}
        if "polygons" in obj:
            region = PolygonRegion(tuple(obj["polygons"]), tuple(obj.get("holes") or ()))
            src = {"polygons": obj["polygons"], "holes": obj.get("holes") or []}
            return rasterize(region, width, height), src
    except (MalformedPolygon, MaskDecodeError, KeyError, TypeError) as exc:
        raise SchemaError(f"{what}: bad mask ({exc})") from exc
    raise SchemaError(f"{what}: mask needs 'polygons' or 'rle'")


def load_dataset(path) -> Dataset:
    """Read, validate and rasterize a manifest; image files must exist."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    return dataset_from_json(doc, path.parent)


def dataset_from_json(doc: dict, root: Path) -> Dataset:
    _check_keys(doc, _TOP_REQUIRED, _TOP_OPTIONAL, "manifest")
    root = Path(root)
    affordances = tuple(doc["affordances"])

    rules = []
    for i, t in enumerate(doc["tasks"]):
        _check_keys(t, _TASK_REQUIRED, _TASK_OPTIONAL, f"tasks[{i}]")
        try:
            rules.append(TaskRule.from_json(t))
        except ValueError as exc:
            raise SchemaError(f"tasks[{i}]: {exc}") from exc

    cats: dict[int, Category] = {}
    for i, c in enumerate(doc["categories"]):
        _check_keys(c, _CAT_REQUIRED, _CAT_OPTIONAL, f"categories[{i}]")
        if c["id"] in cats:
            raise SchemaError(f"duplicate category id {c['id']}")
        cats[c["id"]] = Category(c["id"], c["name"], c["subcategory"], c.get("description", ""), dict(c.get("properties") or {}))

    images: dict[int, SceneAnnotation] = {}
    for i, im in enumerate(doc["images"]):
        _check_keys(im, _IMAGE_REQUIRED, _IMAGE_OPTIONAL, f"images[{i}]")
        if im["id"] in images:
            raise SchemaError(f"duplicate image id {im['id']}")
        img_path = root / im["file_name"]
        if not img_path.is_file():
            raise DanglingReference(f"image file not found: {im['file_name']}")
        depth = None
        if im.get("depth_file"):
            depth = root / im["depth_file"]
            if not depth.is_file():
                raise DanglingReference(f"depth file not found: {im['depth_file']}")
        images[im["id"]] = SceneAnnotation(
            scene_id=str(im["scene_id"]),
            image_id=im["id"],
            image_path=img_path,
            split=im["split"],
            objects=[],
            width=int(im["width"]),
            height=int(im["height"]),
            depth_path=depth,
        )

    for i, a in enumerate(doc["annotations"]):
        what = f"annotations[{i}]"
        _check_keys(a, _ANN_REQUIRED, _ANN_OPTIONAL, what)
        scene = images.get(a["image_id"])
        if scene is None:
            raise DanglingReference(f"{what}: unknown image id {a['image_id']}")
        cat = cats.get(a["category_id"])
        if cat is None:
            raise DanglingReference(f"{what}: unknown category id {a['category_id']}")
        w, h = scene.width, scene.height
        mask, msrc = _decode_region(a["object_mask"], w, h, what)
        affs, asrc = {}, {}
        for j, af in enumerate(a["affordances"]):
            if "name" not in af:
                raise SchemaError(f"{what}.affordances[{j}] missing 'name'")
            m, src = _decode_region(af, w, h, f"{what}.affordances[{j}]")
            affs[af["name"]] = m
            asrc[af["name"]] = src
        grasps = []
        for j, g in enumerate(a["grasps"]):
            if not isinstance(g, dict) or not _GRASP_KEYS <= g.keys():
                raise SchemaError(f"{what}.grasps[{j}] needs fields {sorted(_GRASP_KEYS)}")
            try:
                gr = GraspRect.from_dict(g)
            except InvariantViolation as exc:
                raise InvariantViolation(f"{what}.grasps[{j}]: {exc}") from exc
            if not (0 <= gr.x <= w - 1 and 0 <= gr.y <= h - 1):
                raise InvariantViolation(f"{what}.grasps[{j}]: center ({gr.x}, {gr.y}) outside image")
            grasps.append(gr)
        scene.objects.append(
            SceneObject(
                annotation_id=a["id"],
                object_id=cat.subcategory,
                category=cat.name,
                mask=mask,
                affordances=affs,
                grasps=grasps,
                description=a.get("description", "") or "",
                mask_source=msrc,
                affordance_sources=asrc,
            )
        )

    refs = [s for s in images.values() if s.split == REFERENCE_SPLIT]
    scenes = [s for s in images.values() if s.split != REFERENCE_SPLIT]
    for s in scenes + refs:
        if s.split not in SPLITS:
            raise SchemaError(f"image {s.image_id}: unknown split {s.split!r}")
    return Dataset(
        scenes=scenes,
        references=refs,
        categories=list(cats.values()),
        rules=rules,
        affordances=affordances,
        root=root,
        info=dict(doc.get("info") or {}),
    )


# --- writing --------------------------------------------------------------


def _mask_json(mask: np.ndarray, source: dict | None) -> dict:
    if source is not None:
        if "polygons" in source:
            h, w = mask.shape
            region = PolygonRegion(tuple(source["polygons"]), tuple(source.get("holes") or ()))
            if np.array_equal(rasterize(region, w, h), mask):
                return {"polygons": source["polygons"], "holes": source.get("holes") or []}
        elif "rle" in source and np.array_equal(rle_to_mask({"height": mask.shape[0], "width": mask.shape[1], **source["rle"]}), mask):
            return {"rle": source["rle"]}
    return {"rle": {"counts": mask_to_rle(mask)["counts"]}}


def _relpath(p: Path, root: Path) -> str:
    return Path(os.path.relpath(Path(p).resolve(), Path(root).resolve())).as_posix()


def dataset_to_json(d: Dataset, root: Path) -> dict:
    """Canonical manifest document for ``d`` with paths relative to ``root``."""
    images, annotations = [], []
    cat_ids = {c.subcategory: c.id for c in d.categories}
    for s in sorted(d.references + d.scenes, key=lambda s: s.image_id):
        im = {
            "id": s.image_id,
            "file_name": _relpath(s.image_path, root),
            "width": s.width,
            "height": s.height,
            "scene_id": s.scene_id,
            "split": s.split,
        }
        if s.depth_path is not None:
            im["depth_file"] = _relpath(s.depth_path, root)
        images.append(im)
        for o in s.objects:
            ann = {
                "id": o.annotation_id,
                "image_id": s.image_id,
                "category_id": cat_ids[o.object_id],
                "object_mask": _mask_json(o.mask, o.mask_source),
                "affordances": [
                    {"name": name, **_mask_json(m, o.affordance_sources.get(name))}
                    for name, m in sorted(o.affordances.items())
                ],
                "grasps": [g.to_dict() for g in o.grasps],
                "description": o.description,
                "iscrowd": 0,
                "area": int(np.count_nonzero(o.mask)),
            }
            if ann["area"]:
                x0, y0, x1, y1 = mask_bbox(o.mask)
                ann["bbox"] = [x0, y0, x1 - x0 + 1, y1 - y0 + 1]
            annotations.append(ann)
    annotations.sort(key=lambda a: a["id"])
    cats = []
    for c in sorted(d.categories, key=lambda c: c.id):
        cd = {"id": c.id, "name": c.name, "subcategory": c.subcategory, "description": c.description}
        if c.properties:
            cd["properties"] = c.properties
        cats.append(cd)
    doc = {
        "affordances": list(d.affordances),
        "annotations": annotations,
        "categories": cats,
        "images": images,
        "tasks": [r.to_json() for r in d.rules],
    }
    if d.info:
        doc["info"] = d.info
    return doc


def dumps_manifest(doc: dict) -> str:
    """Stable text form: sorted keys, one array element per line."""
    lines = ["{"]
    keys = sorted(doc)
    for k, key in enumerate(keys):
        val = doc[key]
        tail = "," if k < len(keys) - 1 else ""
        if isinstance(val, list) and val:
            lines.append(f"  {json.dumps(key)}: [")
            for i, item in enumerate(val):
                sep = "," if i < len(val) - 1 else ""
                lines.append("    " + json.dumps(item, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + sep)
            lines.append("  ]" + tail)
        else:
            lines.append(f"  {json.dumps(key)}: " + json.dumps(val, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + tail)
    lines.append("}")
    return "\n".join(lines) + "\n"


def save_dataset(d: Dataset, path) -> Path:
    """Write ``d`` as a manifest at ``path`` (a file, or a directory to hold manifest.json)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    text = dumps_manifest(dataset_to_json(d, path.parent))
    path.write_text(text, encoding="utf-8")
    return path
