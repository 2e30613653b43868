"""Annotation assists: affordance refinement and reference-driven auto-labeling."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from togkit import kernels
from togkit.dataset.model import Dataset, KnowledgeEntry, SceneObject
from togkit.errors import AlignmentFailure, EmptySceneMask
from togkit.geometry import GraspRect, similarity_grasp, similarity_inverse_map
from togkit.maskops import as_mask, mask_and, mask_area, mask_centroid, mask_iou


def refine_affordance(rough, object_mask) -> np.ndarray:
    """Keep only the part of a rough affordance mask that lies on the object."""
    return mask_and(rough, object_mask)


def refine_dataset(d: Dataset) -> Dataset:
    """Copy of ``d`` with every affordance mask clipped to its object mask."""

    def refine_obj(o: SceneObject) -> SceneObject:
        affs = {k: refine_affordance(m, o.mask) for k, m in o.affordances.items()}
        srcs = {k: s for k, s in o.affordance_sources.items() if np.array_equal(affs[k], o.affordances[k])}
        return dataclasses.replace(o, affordances=affs, affordance_sources=srcs)

    def refine_scene(s):
        return dataclasses.replace(s, objects=[refine_obj(o) for o in s.objects])

    return dataclasses.replace(
        d,
        scenes=[refine_scene(s) for s in d.scenes],
        references=[refine_scene(s) for s in d.references],
    )


@dataclass(frozen=True)
class Similarity:
    """Reference -> scene transform found by :func:`estimate_similarity`."""

    angle: float
    scale: float
    src_center: tuple[float, float]
    dst_center: tuple[float, float]
    iou: float

    def warp_mask(self, mask: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
        inv = similarity_inverse_map(self.angle, self.scale, self.src_center, self.dst_center)
        return kernels.warp_nearest(as_mask(mask).astype(np.uint8), inv, shape[0], shape[1]).astype(bool)

    def map_grasp(self, g: GraspRect) -> GraspRect:
        return similarity_grasp(g, self.angle, self.scale, self.src_center, self.dst_center)


def estimate_similarity(scene_mask, ref_mask, n_rots: int = 36) -> Similarity:
    """Centroid translation, sqrt-area scale and an exhaustive rotation search.

    Candidate angles are ``i * 360 / n_rots``; the one with the smallest
    symmetric difference wins, the first one on ties.
    """
    scene_mask, ref_mask = as_mask(scene_mask), as_mask(ref_mask)
    if mask_area(scene_mask) == 0:
        raise EmptySceneMask("scene object mask is empty")
    if mask_area(ref_mask) == 0:
        raise EmptySceneMask("reference object mask is empty")
    if n_rots < 1:
        raise ValueError("n_rots must be >= 1")
    scale = math.sqrt(mask_area(scene_mask) / mask_area(ref_mask))
    src, dst = mask_centroid(ref_mask), mask_centroid(scene_mask)
    best = None
    for i in range(n_rots):
        angle = i * 360.0 / n_rots
        sim = Similarity(angle, scale, src, dst, 0.0)
        warped = sim.warp_mask(ref_mask, scene_mask.shape)
        cost = int(np.count_nonzero(warped ^ scene_mask))
        if best is None or cost < best[0]:
            best = (cost, sim, warped)
    _, sim, warped = best
    return dataclasses.replace(sim, iou=mask_iou(warped, scene_mask))


def auto_label(scene_object_mask, ref: KnowledgeEntry, n_rots: int = 36, min_iou: float = 0.3):
    """Transfer a reference entry's grasps and affordances onto a scene object.

    Returns ``(grasps, rough_affordances)``. Grasps whose mapped center leaves
    the image are dropped. Raises :class:`AlignmentFailure` when the aligned
    reference mask overlaps the scene mask with IoU below ``min_iou``.
    """
    scene_object_mask = as_mask(scene_object_mask)
    sim = estimate_similarity(scene_object_mask, ref.mask, n_rots)
    if sim.iou < min_iou:
        raise AlignmentFailure(f"best alignment IoU {sim.iou:.3f} below {min_iou}")
    h, w = scene_object_mask.shape
    grasps = []
    for g in ref.grasps:
        m = sim.map_grasp(g)
        if 0 <= m.x <= w - 1 and 0 <= m.y <= h - 1:
            grasps.append(m)
    affs = {name: sim.warp_mask(m, (h, w)) for name, m in ref.affordances.items()}
    return grasps, affs


def auto_label_dataset(d: Dataset, refs: Dataset, n_rots: int = 36, min_iou: float = 0.3, refine: bool = True) -> Dataset:
    """Label every scene object of ``d`` from its entry in ``refs``.

    Objects with no matching reference entry keep their annotations.
    """
    by_id = {e.object_id: e for e in refs.entries}

    def label(o: SceneObject) -> SceneObject:
        ref = by_id.get(o.object_id)
        if ref is None:
            return o
        grasps, affs = auto_label(o.mask, ref, n_rots, min_iou)
        if refine:
            affs = {k: refine_affordance(m, o.mask) for k, m in affs.items()}
        return dataclasses.replace(o, grasps=grasps, affordances=affs, affordance_sources={})

    return dataclasses.replace(
        d, scenes=[dataclasses.replace(s, objects=[label(o) for o in s.objects]) for s in d.scenes]
    )
