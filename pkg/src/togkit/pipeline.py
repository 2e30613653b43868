"""The four-stage task-oriented grasping pipeline.

segmentation -> SSF filtering -> recognition -> task region -> grasp
selection, in three framework modes:

* ``binary``   zero-shot recognition from the reference description, one-shot
  affordance transfer from the reference after rotation alignment;
* ``os``       one-shot recognition by nearest reference embedding, same
  affordance path as ``binary``;
* ``standard`` closed-set classifier and affordance segmenter, no knowledge
  base needed for inference.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from togkit.backends.base import AffordancePrediction, AffordanceQuery, BackendSet, Frame, Kind, Mode
from togkit.dataset.model import KnowledgeEntry
from togkit.dataset.rules import DEFAULT_RULES, Polarity, TaskRule, rule_lookup
from togkit.errors import (
    EmptyCandidates,
    EmptyRegion,
    MissingAffordance,
    NoGraspInRegion,
    ShapeMismatch,
    SideMismatch,
    StageError,
    TogkitError,
    UnknownCategory,
    UnknownObject,
)
from togkit.geometry import CropTransform, GraspRect, make_crop_transform, rotate_crop
from togkit.maskops import as_mask, intersection_matrix, mask_bbox

DEFAULT_MIN_AREA = 400
DEFAULT_MAX_AREA = 50_000
DEFAULT_TAU = 0.75
DEFAULT_N_ROTS = 36
DEFAULT_AFFORDANCE_THRESHOLD = 0.5
ZERO_SHOT_SCALE = 100.0
STAGES = ("segmentation", "recognition", "affordance", "grasp")


@dataclass(frozen=True)
class TogParams:
    min_area: float = DEFAULT_MIN_AREA
    max_area: float = DEFAULT_MAX_AREA
    tau: float = DEFAULT_TAU
    n_rots: int = DEFAULT_N_ROTS
    affordance_threshold: float = DEFAULT_AFFORDANCE_THRESHOLD
    empty_region_fallback: bool = False
    crop_side: int = 256

    def __post_init__(self):
        if not 0 < self.min_area < self.max_area:
            raise ValueError(f"need 0 < min_area < max_area, got {self.min_area}, {self.max_area}")
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.n_rots < 1:
            raise ValueError(f"n_rots must be >= 1, got {self.n_rots}")
        if not 0 <= self.affordance_threshold <= 1:
            raise ValueError("affordance_threshold must be in [0, 1]")


# --- stage operations -----------------------------------------------------


def ssf_indices(masks, min_area=DEFAULT_MIN_AREA, max_area=DEFAULT_MAX_AREA, tau=DEFAULT_TAU) -> list[int]:
    """Indices (ascending) of the masks kept by Size Subset Filtering."""
    if len(masks) == 0:
        return []
    ms = [as_mask(m) for m in masks]
    shape = ms[0].shape
    if any(m.shape != shape for m in ms):
        raise ShapeMismatch("segment masks differ in shape")
    areas = np.array([np.count_nonzero(m) for m in ms], dtype=np.int64)
    stage1 = [i for i in range(len(ms)) if min_area < areas[i] < max_area]
    if not stage1:
        return []
    order = sorted(stage1, key=lambda i: (areas[i], i))
    inter = intersection_matrix([ms[i] for i in order])
    keep = []
    for p, i in enumerate(order):
        later = inter[p, p + 1:] / areas[i]
        if not np.any(later > tau):
            keep.append(i)
    return sorted(keep)


def ssf_filter(masks, min_area=DEFAULT_MIN_AREA, max_area=DEFAULT_MAX_AREA, tau=DEFAULT_TAU) -> list[np.ndarray]:
    """Drop out-of-range masks, then masks mostly covered by a larger one.

    Survivors keep their input order.
    """
    return [masks[i] for i in ssf_indices(masks, min_area, max_area, tau)]


def make_masked_images(image, masks) -> list[np.ndarray]:
    """``image * mask`` for every mask; background pixels become exactly 0."""
    image = np.asarray(image)
    out = []
    for m in masks:
        m = as_mask(m)
        if m.shape != image.shape[:2]:
            raise ShapeMismatch(f"mask {m.shape} does not match image {image.shape[:2]}")
        out.append(image * (m[..., None] if image.ndim == 3 else m).astype(image.dtype))
    return out


def _softmax(x: np.ndarray, axis=-1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _unit_rows(f: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(f, axis=-1, keepdims=True)
    return np.divide(f, n, out=np.zeros_like(f), where=n > 0)


def recognize_zero_shot(image_features, text_feature) -> tuple[int, np.ndarray]:
    """Softmax over 100x cosine similarity; returns (index, scores)."""
    if len(image_features) == 0:
        raise EmptyCandidates("no candidates to recognize")
    feats = np.atleast_2d(np.asarray(image_features, dtype=np.float64))
    d = _unit_rows(np.asarray(text_feature, dtype=np.float64))
    logits = ZERO_SHOT_SCALE * (_unit_rows(feats) @ d)
    return int(np.argmax(logits)), _softmax(logits)


def recognize_one_shot(candidate_features, reference_feature) -> int:
    """Index of the candidate nearest (l2) to the reference embedding."""
    if len(candidate_features) == 0:
        raise EmptyCandidates("no candidates to recognize")
    feats = np.atleast_2d(np.asarray(candidate_features, dtype=np.float64))
    dist = np.linalg.norm(feats - np.asarray(reference_feature, dtype=np.float64), axis=1)
    return int(np.argmin(dist))


def recognize_standard(logits, target_category: int) -> tuple[int, np.ndarray]:
    """Row-wise softmax; pick the row most confident in the target column."""
    y = np.asarray(logits, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] == 0:
        raise EmptyCandidates("no candidates to recognize")
    if not 0 <= target_category < y.shape[1]:
        raise UnknownCategory(f"category column {target_category} outside {y.shape[1]} labels")
    z = _softmax(y, axis=1)
    return int(np.argmax(z[:, target_category])), z


def _region_formula(mask: np.ndarray, affordance: np.ndarray | None, polarity: Polarity) -> np.ndarray:
    mask = as_mask(mask)
    if affordance is not None:
        affordance = as_mask(affordance)
        if affordance.shape != mask.shape:
            raise ShapeMismatch(f"affordance {affordance.shape} does not match object {mask.shape}")
    if polarity is Polarity.NONE:
        return mask.copy()
    if polarity is Polarity.REQUIRE:
        return mask & affordance
    return mask & ~affordance


def reference_task_region(entry: KnowledgeEntry, rule: TaskRule) -> np.ndarray:
    """Where on the reference object a grasp must sit for ``rule``."""
    if rule.polarity is Polarity.NONE:
        return entry.mask.copy()
    f = entry.affordances.get(rule.affordance)
    if f is None:
        raise MissingAffordance(f"{entry.object_id} has no {rule.affordance!r} affordance")
    return _region_formula(entry.mask, f, rule.polarity)


def _sq_distance(a: np.ndarray, b: np.ndarray) -> float:
    if a.dtype.kind in "bui" and b.dtype.kind in "bui" and a.itemsize <= 2 and b.itemsize <= 2:
        # exact in int64 and much faster than a float64 round trip
        d = np.subtract(a, b, dtype=np.int32).ravel()
        return float(np.einsum("i,i->", d, d, dtype=np.int64))
    d = (a.astype(np.float64) - b.astype(np.float64)).ravel()
    return float(d @ d)


def affordance_align(scene_crop, ref_crop, ref_region, n_rots: int = DEFAULT_N_ROTS):
    """Rotate the reference so its masked crop best matches the scene crop.

    Tries ``r = i * (360 // n_rots)`` for ``i < n_rots`` and keeps the first
    minimum of the squared distance. Returns ``(ref_crop, ref_region, r)``
    rotated by ``r``; the inputs themselves when ``r == 0``.
    """
    scene_crop, ref_crop, ref_region = np.asarray(scene_crop), np.asarray(ref_crop), np.asarray(ref_region)
    for a in (scene_crop, ref_crop, ref_region):
        if a.shape[0] != a.shape[1]:
            raise SideMismatch(f"crop is not square: {a.shape[:2]}")
    if not scene_crop.shape[0] == ref_crop.shape[0] == ref_region.shape[0]:
        raise SideMismatch(f"crop sides differ: {scene_crop.shape[0]}, {ref_crop.shape[0]}, {ref_region.shape[0]}")
    if n_rots < 1:
        raise ValueError("n_rots must be >= 1")
    region = ref_region.astype(bool)
    masked = ref_crop * (region[..., None] if ref_crop.ndim == 3 else region).astype(ref_crop.dtype)
    step = 360 // n_rots
    best_r, best_d = 0, None
    for i in range(n_rots):
        r = i * step
        d = _sq_distance(scene_crop, rotate_crop(masked, r))
        if best_d is None or d < best_d:
            best_r, best_d = r, d
    if best_r == 0:
        return ref_crop, ref_region, 0
    return rotate_crop(ref_crop, best_r), rotate_crop(ref_region, best_r), best_r


def crop_transform_for(mask, side: int = 256) -> CropTransform:
    x0, y0, x1, y1 = mask_bbox(mask)
    return make_crop_transform((x0, y0, x1 + 1, y1 + 1), side, image_shape=np.shape(mask))


def _masked(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return make_masked_images(image, [mask])[0]


def predict_task_region(
    mode,
    candidate_mask,
    rule: TaskRule,
    *,
    image=None,
    entry: KnowledgeEntry | None = None,
    oneshot=None,
    frame: Frame | None = None,
    predictions: list[AffordancePrediction] | None = None,
    params: TogParams = TogParams(),
    trace: dict | None = None,
) -> np.ndarray:
    """Task-suitable region on the selected candidate.

    ``binary``/``os``: crop candidate and reference, align, ask the one-shot
    model, paste the result back. ``standard``: union of confident predicted
    masks carrying the rule's affordance, combined with the candidate by the
    rule's polarity. Polarity ``none`` returns the candidate mask as is.
    """
    mode = Mode(mode)
    cand = as_mask(candidate_mask)
    trace = trace if trace is not None else {}
    if not cand.any():
        raise EmptyRegion("candidate mask is empty")
    if rule.polarity is Polarity.NONE:
        trace["skipped"] = True
        return cand.copy()
    if mode is Mode.STANDARD:
        stack = np.zeros_like(cand)
        used = 0
        for p in predictions or ():
            if p.label == rule.affordance and p.confidence >= params.affordance_threshold:
                stack |= as_mask(p.mask)
                used += 1
        trace["predictions_used"] = used
        region = _region_formula(cand, stack, rule.polarity)
    else:
        if entry is None or oneshot is None:
            raise ValueError("binary/os region prediction needs a reference entry and a one-shot backend")
        image = np.asarray(image if image is not None else frame.image)
        h, w = cand.shape
        q_ref = reference_task_region(entry, rule)
        t_scene = crop_transform_for(cand, params.crop_side)
        t_ref = crop_transform_for(entry.mask, params.crop_side)
        scene_crop = t_scene.crop(_masked(image, cand))
        ref_crop = t_ref.crop(entry.image)
        ref_region = t_ref.crop(q_ref)
        ref_crop, ref_region, angle = affordance_align(scene_crop, ref_crop, ref_region, params.n_rots)
        trace["aa_angle"] = angle
        trace["crop_transform"] = t_scene.to_dict()
        query = AffordanceQuery(frame, cand, t_scene, rule.affordance, rule.polarity.value, entry.key)
        c_region = as_mask(oneshot.predict_oneshot(scene_crop, ref_crop, ref_region, query))
        region = t_scene.uncrop(c_region, h, w)
    if not region.any():
        if params.empty_region_fallback:
            trace["fallback"] = True
            return cand.copy()
        raise EmptyRegion(f"task region for {rule.task!r} is empty")
    return region


def select_grasp_index(candidates, region) -> int:
    region = as_mask(region)
    h, w = region.shape
    best, best_c = -1, None
    for i, g in enumerate(candidates):
        cx, cy = g.center_pixel
        if not (0 <= cx < w and 0 <= cy < h) or not region[cy, cx]:
            continue
        c = g.confidence if g.confidence is not None else 0.0
        if best_c is None or c > best_c:
            best, best_c = i, c
    if best < 0:
        raise NoGraspInRegion(f"none of {len(candidates)} grasp candidates lies in the task region")
    return best


def select_grasp(candidates, region) -> GraspRect:
    """Highest-confidence candidate whose rounded center is inside ``region``."""
    return candidates[select_grasp_index(candidates, region)]


# --- orchestration --------------------------------------------------------


@dataclass
class TogRequest:
    frame: Frame
    object_id: str
    task: str
    mode: Mode
    backends: BackendSet
    knowledge: object = None  # Dataset (or anything with .entry / .rules)
    params: TogParams = field(default_factory=TogParams)
    rules: tuple[TaskRule, ...] | None = None

    def __post_init__(self):
        self.mode = Mode(self.mode)


@dataclass
class TogResult:
    object_id: str
    task: str
    mode: Mode
    rule: TaskRule | None = None
    segments: list[np.ndarray] = field(default_factory=list)
    kept: list[int] = field(default_factory=list)
    scores: np.ndarray | None = None
    selected: int | None = None
    candidate: np.ndarray | None = None
    region: np.ndarray | None = None
    grasp_candidates: list[GraspRect] = field(default_factory=list)
    grasp_index: int | None = None
    grasp: GraspRect | None = None
    timings: dict[str, float] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    failed_stage: str | None = None
    error: str | None = None

    @property
    def kept_masks(self) -> list[np.ndarray]:
        return [self.segments[i] for i in self.kept]

    @property
    def ok(self) -> bool:
        return self.grasp is not None and self.error is None

    def to_json(self, timings: bool = False) -> dict:
        d = {
            "object": self.object_id,
            "task": self.task,
            "mode": self.mode.value,
            "rule": self.rule.to_json() if self.rule else None,
            "segments": len(self.segments),
            "segment_areas": [int(np.count_nonzero(m)) for m in self.segments],
            "kept": list(self.kept),
            "scores": None if self.scores is None else [float(s) for s in np.ravel(self.scores)],
            "selected": self.selected,
            "candidate_area": None if self.candidate is None else int(np.count_nonzero(self.candidate)),
            "region_area": None if self.region is None else int(np.count_nonzero(self.region)),
            "grasp_candidates": [g.to_dict() for g in self.grasp_candidates],
            "grasp_index": self.grasp_index,
            "grasp": self.grasp.to_dict() if self.grasp else None,
            "diagnostics": self.diagnostics,
            "failed_stage": self.failed_stage,
            "error": self.error,
        }
        if timings:
            d["timings"] = dict(self.timings)
        return d


def _rules_of(req: TogRequest):
    if req.rules is not None:
        return req.rules
    if req.knowledge is not None and getattr(req.knowledge, "rules", None):
        return req.knowledge.rules
    return DEFAULT_RULES


def _entry_of(req: TogRequest) -> KnowledgeEntry | None:
    if req.knowledge is None:
        return None
    try:
        return req.knowledge.entry(req.object_id)
    except KeyError:
        return None


class _Stage:
    def __init__(self, result: TogResult, name: str):
        self.result, self.name = result, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, et, exc, tb):
        self.result.timings[self.name] = time.perf_counter() - self.t0
        if exc is not None and isinstance(exc, Exception) and not isinstance(exc, StageError):
            self.result.failed_stage = self.name
            self.result.error = f"{type(exc).__name__}: {exc}"
            err = StageError(self.name, exc)
            err.result = self.result
            raise err from exc
        return False


def run_tog(req: TogRequest) -> TogResult:
    """Run every stage, recording intermediates in the returned result.

    Stage failures are raised as :class:`StageError` (``.stage``, ``.cause``
    and the partial ``.result``). Unknown objects, tasks and missing backend
    kinds are rejected before any backend is called.
    """
    p = req.params
    rule = rule_lookup(_rules_of(req), req.task)
    req.backends.check_mode(req.mode)
    entry = _entry_of(req)
    labels = None
    if req.mode in (Mode.BINARY, Mode.OS):
        if entry is None:
            raise UnknownObject(f"no knowledge-base entry for object {req.object_id!r}")
    else:
        labels = tuple(getattr(req.backends.get(Kind.CLASSIFIER), "labels", ()) or ())
        if labels and req.object_id not in labels:
            if entry is None:
                raise UnknownObject(f"unknown object {req.object_id!r}")
            raise UnknownCategory(f"object {req.object_id!r} is outside the classifier's label set")
    frame = req.frame
    image = np.asarray(frame.image)
    res = TogResult(req.object_id, req.task, req.mode, rule)

    with _Stage(res, "segmentation"):
        res.segments = [as_mask(m) for m in req.backends.get(Kind.SEGMENTER).segment(frame)]
        res.kept = ssf_indices(res.segments, p.min_area, p.max_area, p.tau)
        if not res.kept:
            raise EmptyCandidates(f"no segments left after filtering ({len(res.segments)} proposed)")

    kept = res.kept_masks
    with _Stage(res, "recognition"):
        if req.mode is Mode.BINARY:
            emb = req.backends.get(Kind.IMAGE_EMBEDDER)
            feats = [emb.embed_image(c, frame, m) for c, m in zip(make_masked_images(image, kept), kept)]
            text = req.backends.get(Kind.TEXT_EMBEDDER).embed_text(entry.description)
            res.selected, res.scores = recognize_zero_shot(feats, text)
        elif req.mode is Mode.OS:
            emb = req.backends.get(Kind.PAIR_EMBEDDER)
            feats = []
            for m in kept:
                t = crop_transform_for(m, p.crop_side)
                feats.append(emb.embed_pair(t.crop(_masked(image, m)), frame, m))
            t_ref = crop_transform_for(entry.mask, p.crop_side)
            ref_frame = Frame(entry.image, entry.key, entry.image_path)
            ref_feat = emb.embed_pair(t_ref.crop(_masked(entry.image, entry.mask)), ref_frame, entry.mask)
            res.selected = recognize_one_shot(feats, ref_feat)
            res.scores = np.linalg.norm(np.asarray(feats) - ref_feat, axis=1)
        else:
            clf = req.backends.get(Kind.CLASSIFIER)
            crops = [crop_transform_for(m, p.crop_side).crop(_masked(image, m)) for m in kept]
            logits = clf.classify(crops, frame, kept)
            labels = tuple(getattr(clf, "labels", ()) or ())
            if req.object_id not in labels:
                raise UnknownCategory(f"object {req.object_id!r} is outside the classifier's label set")
            res.selected, z = recognize_standard(logits, labels.index(req.object_id))
            res.scores = z[:, labels.index(req.object_id)]
        res.candidate = kept[res.selected]

    with _Stage(res, "affordance"):
        diag: dict = {}
        preds = None
        if req.mode is Mode.STANDARD and rule.polarity is not Polarity.NONE:
            preds = req.backends.get(Kind.AFFORDANCE_SEGMENTER).segment_affordances(frame)
        oneshot = req.backends.get(Kind.AFFORDANCE_ONESHOT) if req.mode is not Mode.STANDARD else None
        res.region = predict_task_region(
            req.mode, res.candidate, rule, image=image, entry=entry, oneshot=oneshot,
            frame=frame, predictions=preds, params=p, trace=diag,
        )
        res.diagnostics["affordance"] = diag

    with _Stage(res, "grasp"):
        res.grasp_candidates = list(req.backends.get(Kind.GRASP_PROPOSER).propose(frame))
        res.grasp_index = select_grasp_index(res.grasp_candidates, res.region)
        res.grasp = res.grasp_candidates[res.grasp_index]
    return res


def run_tog_safe(req: TogRequest) -> TogResult:
    """Like :func:`run_tog` but records a stage failure in the result instead of raising."""
    try:
        return run_tog(req)
    except StageError as exc:
        return exc.result


__all__ = [
    "DEFAULT_AFFORDANCE_THRESHOLD",
    "DEFAULT_MAX_AREA",
    "DEFAULT_MIN_AREA",
    "DEFAULT_N_ROTS",
    "DEFAULT_TAU",
    "STAGES",
    "TogParams",
    "TogRequest",
    "TogResult",
    "TogkitError",
    "affordance_align",
    "crop_transform_for",
    "make_masked_images",
    "predict_task_region",
    "recognize_one_shot",
    "recognize_standard",
    "recognize_zero_shot",
    "reference_task_region",
    "run_tog",
    "run_tog_safe",
    "select_grasp",
    "select_grasp_index",
    "ssf_filter",
    "ssf_indices",
]
