"""Evaluation: grasp and TG success rules, mask AP, recognition F1, split runs and reports."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from togkit.backends.base import BackendSet, Frame, Mode
from togkit.dataset.rules import Polarity, applicable_tasks, rule_lookup
from togkit.errors import EmptyRegion, EmptySplit, EmptyTrials, NoGroundTruth, UnknownFormat
from togkit.geometry import GraspRect, angle_diff, rotated_iou
from togkit.maskops import as_mask
from togkit.pipeline import TogParams, TogRequest, _region_formula, run_tog_safe, ssf_indices

DEFAULT_IOU_THRESHOLD = 0.25
DEFAULT_ANGLE_THRESHOLD = 30.0
AP_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
SMALL_AREA = 32**2
LARGE_AREA = 96**2
MAX_DETS = 100
FAILURE_STAGES = ("segmentation", "recognition", "region", "grasp")


@dataclass(frozen=True)
class EvalConfig:
    split: str = "category"
    mode: Mode = Mode.BINARY
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    angle_threshold: float = DEFAULT_ANGLE_THRESHOLD
    ap_grid: tuple[float, ...] = AP_GRID
    small_area: int = SMALL_AREA
    large_area: int = LARGE_AREA
    params: TogParams = field(default_factory=TogParams)
    workers: int = 1
    keep_traces: bool = False
    backend: dict | None = None  # backend config; None means noiseless oracles

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.iou_threshold <= 0 or self.angle_threshold <= 0:
            raise ValueError("thresholds must be positive")
        if any(b <= a for a, b in zip(self.ap_grid, self.ap_grid[1:])):
            raise ValueError("AP IoU grid must be strictly increasing")


_DEFAULT_CFG = EvalConfig()


# --- success rules --------------------------------------------------------


def grasp_success(pred: GraspRect, gts, cfg: EvalConfig = _DEFAULT_CFG) -> bool:
    """IoU above the threshold and angle within it, against the same GT grasp."""
    if not gts:
        raise NoGroundTruth("no ground-truth grasps to compare against")
    for gt in gts:
        if angle_diff(pred.theta, gt.theta) <= cfg.angle_threshold and rotated_iou(pred, gt) > cfg.iou_threshold:
            return True
    return False


def tog_success(pred: GraspRect, gts, gt_region, cfg: EvalConfig = _DEFAULT_CFG) -> bool:
    """:func:`grasp_success` and the rounded grasp center inside the GT task region."""
    region = as_mask(gt_region)
    if not region.any():
        raise EmptyRegion("ground-truth task region is empty")
    if not grasp_success(pred, gts, cfg):
        return False
    cx, cy = pred.center_pixel
    h, w = region.shape
    return 0 <= cx < w and 0 <= cy < h and bool(region[cy, cx])


# --- mask AP --------------------------------------------------------------


@dataclass
class APTable:
    ap: float | None
    ap50: float | None
    ap75: float | None
    ap_small: float | None
    ap_medium: float | None
    ap_large: float | None
    mean_iou: float | None
    per_threshold: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def _iou_matrix(preds, gts) -> np.ndarray:
    if not preds or not gts:
        return np.zeros((len(preds), len(gts)))
    p = np.stack([as_mask(m).ravel() for m in preds]).astype(np.float32)
    g = np.stack([as_mask(m).ravel() for m in gts]).astype(np.float32)
    inter = np.rint(p @ g.T)
    union = p.sum(1)[:, None] + g.sum(1)[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0).astype(np.float64)


def _area_ok(area, rng) -> bool:
    lo, hi = rng
    return lo <= area < hi


def _evaluate_image(ious, scores, pred_areas, gt_areas, t, rng):
    """COCO-style greedy matching for one image, threshold and area range.

    Returns (scores, matched flags, ignored flags, number of counted GTs).
    """
    gt_ignore = np.array([not _area_ok(a, rng) for a in gt_areas], dtype=bool)
    gorder = np.argsort(gt_ignore, kind="stable")  # counted GTs first
    matched_gt = np.zeros(len(gt_areas), dtype=bool)
    n = len(scores)
    tp = np.zeros(n, bool)
    ign = np.zeros(n, bool)
    for d in range(n):
        best, best_iou = -1, min(t, 1 - 1e-10)
        for g in gorder:
            if matched_gt[g]:
                continue
            if best > -1 and not gt_ignore[best] and gt_ignore[g]:
                break
            if ious[d, g] < best_iou:
                continue
            best, best_iou = g, ious[d, g]
        if best > -1:
            matched_gt[best] = True
            tp[d] = True
            ign[d] = gt_ignore[best]
        else:
            ign[d] = not _area_ok(pred_areas[d], rng)
    return tp, ign, int((~gt_ignore).sum())


def _interp_ap(scores, tp, ign, n_gt) -> float | None:
    if n_gt == 0:
        return None
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="mergesort")
    tp, ign = np.asarray(tp, dtype=bool)[order], np.asarray(ign, dtype=bool)[order]
    keep = ~ign
    tps = np.cumsum(tp[keep])
    fps = np.cumsum(~tp[keep])
    if tps.size == 0:
        return 0.0
    recall = tps / n_gt
    precision = tps / np.maximum(tps + fps, np.finfo(np.float64).eps)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < precision.size, precision[np.minimum(idx, precision.size - 1)], 0.0)
    return float(q.mean())


def mask_ap(predictions, gts, cfg: EvalConfig = _DEFAULT_CFG) -> APTable:
    """COCO mask AP over images.

    ``predictions[i]`` is a list of ``(mask, score)`` and ``gts[i]`` a list of
    masks for image ``i``. A prediction matches an unmatched GT when IoU is at
    least the threshold, in descending-score order; AP is the 101-point
    interpolated precision averaged over the IoU grid. Size buckets use GT
    area (small below 32^2, large from 96^2). Buckets without GTs give None.
    """
    if len(predictions) != len(gts):
        raise ValueError("predictions and ground truth cover different image counts")
    ranges = {
        "all": (0, float("inf")),
        "small": (0, cfg.small_area),
        "medium": (cfg.small_area, cfg.large_area),
        "large": (cfg.large_area, float("inf")),
    }
    images = []
    for preds, gt in zip(predictions, gts):
        preds = sorted(enumerate(preds), key=lambda p: (-float(p[1][1]), p[0]))[:MAX_DETS]
        masks = [as_mask(m) for _, (m, _) in preds]
        scores = [float(s) for _, (_, s) in preds]
        gmasks = [as_mask(m) for m in gt]
        images.append((
            _iou_matrix(masks, gmasks),
            scores,
            [int(np.count_nonzero(m)) for m in masks],
            [int(np.count_nonzero(m)) for m in gmasks],
        ))

    def ap_at(t, rng):
        all_s, all_tp, all_ign, n_gt = [], [], [], 0
        for ious, scores, pa, ga in images:
            tp, ign, n = _evaluate_image(ious, scores, pa, ga, t, rng)
            all_s.extend(scores)
            all_tp.extend(tp)
            all_ign.extend(ign)
            n_gt += n
        return _interp_ap(all_s, all_tp, all_ign, n_gt)

    per_t = [ap_at(t, ranges["all"]) for t in cfg.ap_grid]

    def mean(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    def bucket(name):
        return mean([ap_at(t, ranges[name]) for t in cfg.ap_grid])

    # mean IoU over pairs matched at 0.5
    ious_matched = []
    for ious, scores, pa, ga in images:
        tp_flags, _, _ = _evaluate_image(ious, scores, pa, ga, 0.5, ranges["all"])
        matched = np.zeros(len(ga), bool)
        for d in range(len(scores)):
            if not tp_flags[d]:
                continue
            cand = [(ious[d, g], -g) for g in range(len(ga)) if not matched[g] and ious[d, g] >= 0.5]
            if cand:
                v, ng = max(cand)
                matched[-ng] = True
                ious_matched.append(v)
    grid = list(cfg.ap_grid)
    return APTable(
        ap=mean(per_t),
        ap50=per_t[grid.index(0.5)] if 0.5 in grid else ap_at(0.5, ranges["all"]),
        ap75=per_t[grid.index(0.75)] if 0.75 in grid else ap_at(0.75, ranges["all"]),
        ap_small=bucket("small"),
        ap_medium=bucket("medium"),
        ap_large=bucket("large"),
        mean_iou=float(np.mean(ious_matched)) if ious_matched else None,
        per_threshold=[[t, v] for t, v in zip(grid, per_t)],
    )


# --- recognition ----------------------------------------------------------


def _per_class(trials):
    classes = sorted({t for _, t in trials})
    out = {}
    for c in classes:
        tp = sum(1 for p, t in trials if p == c and t == c)
        fp = sum(1 for p, t in trials if p == c and t != c)
        fn = sum(1 for p, t in trials if p != c and t == c)
        out[c] = (tp, fp, fn)
    return out


def f1_recognition(trials) -> tuple[float, float]:
    """``(accuracy, macro F1)`` over ``(predicted, true)`` pairs; classes are the true ids."""
    trials = [(p, t) for p, t in trials]
    if not trials:
        raise EmptyTrials("no recognition trials")
    acc = sum(p == t for p, t in trials) / len(trials)
    f1s = [2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0 for tp, fp, fn in _per_class(trials).values()]
    return acc, float(np.mean(f1s))


def micro_f1(trials) -> float:
    trials = list(trials)
    if not trials:
        raise EmptyTrials("no recognition trials")
    tp = fp = fn = 0
    for a, b, c in _per_class(trials).values():
        tp, fp, fn = tp + a, fp + b, fn + c
    return 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0


def pixel_f1(pred, gt) -> float:
    pred, gt = as_mask(pred), as_mask(gt)
    denom = np.count_nonzero(pred) + np.count_nonzero(gt)
    if denom == 0:
        return 1.0
    return 2 * np.count_nonzero(pred & gt) / denom


# --- split evaluation -----------------------------------------------------


@dataclass
class Trial:
    scene_id: str
    split: str
    object_id: str
    category: str
    task: str
    success: bool
    grasp_success: bool
    predicted_object: str
    affordance_f1: float
    failure: str | None = None
    error: str | None = None
    trace: dict | None = None

    @property
    def key(self):
        return (self.scene_id, self.object_id, self.task)


@dataclass
class EvalReport:
    mode: str
    split: str
    trials: list[Trial]
    tg_accuracy: float
    grasp_accuracy: float
    recognition_accuracy: float
    recognition_f1: float
    recognition_f1_micro: float
    affordance_f1: float
    per_object_task: list[dict]
    per_subsplit: dict[str, dict]
    failures: dict[str, int]
    segmentation: dict[str, dict]
    manual_overrides: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_json(cls, d: dict) -> EvalReport:
        d = dict(d)
        d["trials"] = [Trial(**t) for t in d["trials"]]
        return cls(**d)


def _gt_region(obj, rule) -> np.ndarray:
    if rule.polarity is Polarity.NONE:
        return obj.mask.copy()
    f = obj.affordances.get(rule.affordance)
    if f is None:
        f = np.zeros_like(obj.mask)
    return _region_formula(obj.mask, f, rule.polarity)


def _identify(candidate, scene) -> str:
    """Id of the GT object that best overlaps ``candidate`` (IoU >= 0.5) or ``none``."""
    if candidate is None:
        return "none"
    ious = _iou_matrix([candidate], [o.mask for o in scene.objects])[0]
    if ious.size == 0 or ious.max() < 0.5:
        return "none"
    return scene.objects[int(np.argmax(ious))].object_id


def _frame(scene) -> Frame:
    return Frame(scene.load_image(), f"scene:{scene.image_id}", scene.image_path)


def _run_trial(dataset, scene, frame, obj, task, backends, cfg: EvalConfig) -> Trial:
    rule = rule_lookup(dataset.rules, task)
    res = run_tog_safe(TogRequest(frame, obj.object_id, task, cfg.mode, backends, dataset, cfg.params))
    predicted = _identify(res.candidate, scene)
    gt_region = _gt_region(obj, rule)
    aff_f1 = pixel_f1(res.region, gt_region) if res.region is not None else 0.0
    g_ok = bool(res.grasp is not None and obj.grasps and grasp_success(res.grasp, obj.grasps, cfg))
    ok = bool(g_ok and gt_region.any() and tog_success(res.grasp, obj.grasps, gt_region, cfg))
    failure = None
    if not ok:
        target_kept = any(_identify(m, scene) == obj.object_id for m in res.kept_masks)
        if res.failed_stage == "segmentation" or (res.candidate is None and not target_kept and res.failed_stage is None):
            failure = "segmentation"
        elif res.failed_stage == "recognition" or predicted != obj.object_id:
            failure = "recognition" if target_kept or res.failed_stage == "recognition" else "segmentation"
        elif res.failed_stage == "affordance":
            failure = "region"
        elif res.failed_stage == "grasp" or not g_ok:
            failure = "grasp"
        else:
            failure = "region"
    return Trial(
        scene_id=scene.scene_id,
        split=scene.split,
        object_id=obj.object_id,
        category=obj.category,
        task=task,
        success=ok,
        grasp_success=g_ok,
        predicted_object=predicted,
        affordance_f1=float(aff_f1),
        failure=failure,
        error=res.error,
        trace=res.to_json() if cfg.keep_traces else None,
    )


def trial_plan(dataset, split: str):
    """``(scene, object, task)`` triples evaluated for ``split``, in order."""
    scenes = sorted(dataset.select(split), key=lambda s: s.scene_id)
    return [
        (s, o, t)
        for s in scenes
        for o in s.objects
        for t in applicable_tasks(dataset.rules, o.category)
    ]


def _segmentation_tables(dataset, scenes, frames, backends: BackendSet, cfg: EvalConfig) -> dict:
    from togkit.backends.base import Kind

    seg = backends.get(Kind.SEGMENTER)
    raw, kept, gts = [], [], []
    for s in scenes:
        masks = [as_mask(m) for m in seg.segment(frames[s.scene_id])]
        idx = set(ssf_indices(masks, cfg.params.min_area, cfg.params.max_area, cfg.params.tau))
        raw.append([(m, 1.0) for m in masks])
        kept.append([(m, 1.0) for i, m in enumerate(masks) if i in idx])
        gts.append([o.mask for o in s.objects])
    return {"raw": mask_ap(raw, gts, cfg).to_json(), "ssf": mask_ap(kept, gts, cfg).to_json()}


def _rate(xs) -> float:
    xs = list(xs)
    return float(sum(xs) / len(xs)) if xs else 0.0


def evaluate_split(dataset, cfg: EvalConfig = _DEFAULT_CFG, backends: BackendSet | None = None) -> EvalReport:
    """Run one trial per (scene, object, applicable task) and aggregate the metrics.

    Backends are built from ``cfg.backend`` unless given. Trial failures are
    recorded, not raised. ``cfg.workers > 1`` runs trials on a thread pool;
    results are ordered by trial key either way.
    """
    plan = trial_plan(dataset, cfg.split)
    scenes = sorted(dataset.select(cfg.split), key=lambda s: s.scene_id)
    if not scenes:
        raise EmptySplit(f"split {cfg.split!r} has no scenes")
    if backends is None:
        from togkit.backends.config import build_backends

        backends = build_backends(cfg.backend or {}, dataset=dataset)
    backends.check_mode(cfg.mode)
    frames = {s.scene_id: _frame(s) for s in scenes}

    def run(item):
        s, o, t = item
        return _run_trial(dataset, s, frames[s.scene_id], o, t, backends, cfg)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            trials = list(pool.map(run, plan))
    else:
        trials = [run(item) for item in plan]
    trials.sort(key=lambda tr: tr.key)

    groups: dict[tuple[str, str], list[Trial]] = {}
    for tr in trials:
        groups.setdefault((tr.object_id, tr.task), []).append(tr)
    per_ot = [
        {
            "object": o,
            "task": t,
            "trials": len(ts),
            "successes": sum(x.success for x in ts),
            "tg_accuracy": _rate(x.success for x in ts),
            "grasp_accuracy": _rate(x.grasp_success for x in ts),
        }
        for (o, t), ts in sorted(groups.items())
    ]
    per_split = {}
    for sp in sorted({tr.split for tr in trials}):
        ts = [x for x in trials if x.split == sp]
        acc, f1 = f1_recognition([(x.predicted_object, x.object_id) for x in ts])
        per_split[sp] = {
            "trials": len(ts),
            "tg_accuracy": _rate(x.success for x in ts),
            "grasp_accuracy": _rate(x.grasp_success for x in ts),
            "recognition_accuracy": acc,
            "recognition_f1": f1,
            "affordance_f1": float(np.mean([x.affordance_f1 for x in ts])),
        }
    pairs = [(x.predicted_object, x.object_id) for x in trials]
    acc, f1 = f1_recognition(pairs)
    failures = {st: sum(1 for x in trials if x.failure == st) for st in FAILURE_STAGES}
    return EvalReport(
        mode=cfg.mode.value,
        split=cfg.split,
        trials=trials,
        tg_accuracy=_rate(x.success for x in trials),
        grasp_accuracy=_rate(x.grasp_success for x in trials),
        recognition_accuracy=acc,
        recognition_f1=f1,
        recognition_f1_micro=micro_f1(pairs),
        affordance_f1=float(np.mean([x.affordance_f1 for x in trials])),
        per_object_task=per_ot,
        per_subsplit=per_split,
        failures=failures,
        segmentation=_segmentation_tables(dataset, scenes, frames, backends, cfg),
    )


# --- reports --------------------------------------------------------------

FORMATS = ("json", "csv", "markdown")
_EXT = {"json": "json", "csv": "csv", "markdown": "md"}


def _pct(v) -> str:
    return "-" if v is None else f"{100 * v:.1f}"


def _num(v) -> str:
    return "-" if v is None else f"{v:.3f}"


def report_markdown(r: EvalReport) -> str:
    out = io.StringIO()
    w = out.write
    w(f"# TOG evaluation: {r.mode} on {r.split}\n\n")
    w("## Summary\n\n")
    w("| Metric | Value |\n|---|---|\n")
    w(f"| Trials | {len(r.trials)} |\n")
    w(f"| TG accuracy (%) | {_pct(r.tg_accuracy)} |\n")
    w(f"| Grasp accuracy (%) | {_pct(r.grasp_accuracy)} |\n")
    w(f"| Object recognition accuracy (%) | {_pct(r.recognition_accuracy)} |\n")
    w(f"| Object recognition F1 (macro) | {_num(r.recognition_f1)} |\n")
    w(f"| Object recognition F1 (micro) | {_num(r.recognition_f1_micro)} |\n")
    w(f"| Affordance F1 | {_num(r.affordance_f1)} |\n\n")
    w("## Per subsplit\n\n")
    w("| Subsplit | Trials | TG acc. (%) | Grasp acc. (%) | Rec. acc. (%) | Rec. F1 | Aff. F1 |\n")
    w("|---|---|---|---|---|---|---|\n")
    for sp, v in sorted(r.per_subsplit.items()):
        w(f"| {sp} | {v['trials']} | {_pct(v['tg_accuracy'])} | {_pct(v['grasp_accuracy'])} | "
          f"{_pct(v['recognition_accuracy'])} | {_num(v['recognition_f1'])} | {_num(v['affordance_f1'])} |\n")
    w("\n## Per object and task\n\n")
    manual = bool(r.manual_overrides)
    w("| Object | Task | Trials | TG acc. (%) | Grasp acc. (%) |" + (" Manual |" if manual else "") + "\n")
    w("|---|---|---|---|---|" + ("---|" if manual else "") + "\n")
    last = None
    for row in r.per_object_task:
        name = row["object"] if row["object"] != last else ""
        last = row["object"]
        w(f"| {name} | *{row['task']}* | {row['trials']} | {_pct(row['tg_accuracy'])} | {_pct(row['grasp_accuracy'])} |")
        if manual:
            v = r.manual_overrides.get(f"{row['object']}/{row['task']}")
            w(f" {'' if v is None else v:} |")
        w("\n")
    w("\n## Object segmentation\n\n")
    w("| Filtering | AP | AP50 | AP75 | APs | APm | APl | IoU |\n|---|---|---|---|---|---|---|---|\n")
    for name, t in (("none", r.segmentation.get("raw")), ("SSF", r.segmentation.get("ssf"))):
        if t:
            w(f"| {name} | {_num(t['ap'])} | {_num(t['ap50'])} | {_num(t['ap75'])} | {_num(t['ap_small'])} | "
              f"{_num(t['ap_medium'])} | {_num(t['ap_large'])} | {_num(t['mean_iou'])} |\n")
    w("\n## Failures by stage\n\n")
    w("| Stage | Trials |\n|---|---|\n")
    for st in FAILURE_STAGES:
        w(f"| {st} | {r.failures.get(st, 0)} |\n")
    return out.getvalue()


def report_csv(r: EvalReport) -> str:
    out = io.StringIO()
    wr = csv.writer(out, lineterminator="\n")
    wr.writerow(["object", "task", "trials", "successes", "tg_accuracy", "grasp_accuracy", "manual_override"])
    for row in r.per_object_task:
        wr.writerow([
            row["object"], row["task"], row["trials"], row["successes"],
            f"{row['tg_accuracy']:.6f}", f"{row['grasp_accuracy']:.6f}",
            r.manual_overrides.get(f"{row['object']}/{row['task']}", ""),
        ])
    return out.getvalue()


def report_json(r: EvalReport) -> str:
    return json.dumps(r.to_json(), indent=1, sort_keys=True) + "\n"


def emit_report(report: EvalReport, fmt: str, path) -> Path:
    """Write ``report`` in ``fmt``; ``path`` may be a directory (``report.<ext>`` inside)."""
    if fmt not in FORMATS:
        raise UnknownFormat(f"unknown report format {fmt!r} (expected one of {', '.join(FORMATS)})")
    path = Path(path)
    if path.is_dir() or not path.suffix:
        path.mkdir(parents=True, exist_ok=True)
        path = path / f"report.{_EXT[fmt]}"
    text = {"json": report_json, "csv": report_csv, "markdown": report_markdown}[fmt](report)
    path.write_text(text, encoding="utf-8")
    return path


def load_report(path) -> EvalReport:
    return EvalReport.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
