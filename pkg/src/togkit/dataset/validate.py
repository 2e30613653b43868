"""Dataset-wide consistency checks that report rather than raise."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from togkit.dataset.model import CATEGORY_SPLITS, REFERENCE_SPLIT, SUBCATEGORY_SPLITS, Dataset

ERROR = "error"
WARNING = "warning"


@dataclass(frozen=True)
class Issue:
    level: str
    code: str
    message: str
    where: str = ""

    def __str__(self):
        loc = f" [{self.where}]" if self.where else ""
        return f"{self.level}: {self.message}{loc}"

    def to_json(self) -> dict:
        return {"level": self.level, "code": self.code, "message": self.message, "where": self.where}


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    @property
    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.level == ERROR]

    @property
    def warnings(self) -> list[Issue]:
        return [i for i in self.issues if i.level == WARNING]

    @property
    def ok(self) -> bool:
        return not self.errors

    def __len__(self):
        return len(self.issues)

    def __bool__(self):
        return bool(self.issues)

    def to_json(self) -> dict:
        return {"errors": len(self.errors), "warnings": len(self.warnings), "issues": [i.to_json() for i in self.issues]}


def _check_cardinality(scene, add):
    n = len(scene.objects)
    cats = [o.category for o in scene.objects]
    subs = [o.object_id for o in scene.objects]
    where = f"scene {scene.scene_id}"
    if scene.split in CATEGORY_SPLITS:
        if not 1 <= n <= 5:
            add(ERROR, "split-cardinality", f"category-split scene has {n} objects (allowed 1-5)", where)
        if len(set(cats)) != n:
            add(ERROR, "split-cardinality", "category-split scene repeats a category", where)
    elif scene.split in SUBCATEGORY_SPLITS:
        if not 2 <= n <= 4:
            add(ERROR, "split-cardinality", f"subcategory-split scene has {n} objects (allowed 2-4)", where)
        if len(set(cats)) > 1:
            add(ERROR, "split-cardinality", "subcategory-split scene mixes categories", where)
        if len(set(subs)) != n:
            add(ERROR, "split-cardinality", "subcategory-split scene repeats a subcategory", where)
    elif scene.split == REFERENCE_SPLIT and n != 1:
        add(ERROR, "split-cardinality", f"reference scene has {n} objects (expected 1)", where)


def validate_dataset(d: Dataset) -> ValidationReport:
    """Collect errors and warnings; the report is empty iff every check passes."""
    report = ValidationReport()

    def add(level, code, message, where=""):
        report.issues.append(Issue(level, code, message, where))

    vocab = set(d.affordances)
    for r in d.rules:
        if r.affordance is not None and r.affordance not in vocab:
            add(ERROR, "unknown-affordance", f"rule {r.task!r} names unknown affordance {r.affordance!r}", f"task {r.task}")
    tasks = [r.task for r in d.rules]
    for t in sorted({t for t in tasks if tasks.count(t) > 1}):
        add(ERROR, "duplicate-task", f"task {t!r} has more than one rule", f"task {t}")

    ref_ids = {e.object_id for e in d.entries}
    for e in d.entries:
        if not e.description.strip():
            add(WARNING, "missing-description", f"reference entry {e.object_id} has no description", f"reference {e.object_id}")

    for scene in d.references + d.scenes:
        _check_cardinality(scene, add)
        for o in scene.objects:
            where = f"scene {scene.scene_id} / {o.object_id}"
            if not o.mask.any():
                add(ERROR, "empty-object-mask", "object mask is empty", where)
                continue
            if scene.split != REFERENCE_SPLIT and o.object_id not in ref_ids:
                add(WARNING, "no-reference", f"no reference entry for {o.object_id}", where)
            for name, m in sorted(o.affordances.items()):
                if name not in vocab:
                    add(ERROR, "unknown-affordance", f"affordance {name!r} not in vocabulary", where)
                if not m.any():
                    add(WARNING, "empty-affordance", f"affordance {name!r} is empty", where)
                escaped = int(np.count_nonzero(m & ~o.mask))
                if escaped:
                    add(WARNING, "affordance-outside-object", f"affordance {name!r} has {escaped} px outside the object", where)
            h, w = o.mask.shape
            for i, g in enumerate(o.grasps):
                cx, cy = g.center_pixel
                if not (0 <= cx < w and 0 <= cy < h) or not o.mask[cy, cx]:
                    add(WARNING, "grasp-off-object", f"grasp {i}: grasp center off object", where)
    return report
