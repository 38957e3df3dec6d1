"""Instance labeling by semantic vote and the semantic + instance merge."""
from __future__ import annotations

from collections.abc import Collection
from dataclasses import dataclass

import numpy as np

from ..structures import IGNORE, VOID, Instance, PanopticMap, Segment


@dataclass(frozen=True)
class PanopticMergeConfig:
    overlap_keep_fraction: float = 0.5
    min_stuff_area: int = 64


def vote_instance_classes(segm_dist: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Majority vote of semantic scores inside each mask.

    Args:
        segm_dist: (H, W, K) color distances to the K thing-class colors.
        masks: (N, H, W) binary instance masks.

    Returns:
        (N,) class index per instance (ties go to the lowest class id).
    """
    segm_dist = np.asarray(segm_dist, dtype=np.float64)
    masks = np.asarray(masks, dtype=np.float64)
    if masks.ndim == 2:
        masks = masks[None]
    if masks.shape[1:] != segm_dist.shape[:2]:
        raise ValueError(f"masks {masks.shape[1:]} vs distance field {segm_dist.shape[:2]}")
    top = segm_dist.max()
    if top <= 0:
        raise ValueError("distance field is identically zero; scores are undefined")
    scores = 1.0 - segm_dist / top
    class_probs = np.einsum("nhw,hwk->nk", masks, scores)
    return class_probs.argmax(axis=-1)


def merge_panoptic(sem: np.ndarray, insts: list[Instance], thing_classes: Collection[int],
                   stuff_classes: Collection[int], overlap_keep_fraction: float = 0.5,
                   min_stuff_area: int = 64) -> PanopticMap:
    """Merge a label map and classified instances into a panoptic map.

    Instances claim unclaimed pixels in descending score order and are dropped
    when they keep less than ``overlap_keep_fraction`` of their mask. Leftover
    pixels take stuff labels from ``sem``; stuff regions below
    ``min_stuff_area`` pixels, thing-class pixels not covered by an instance,
    and IGNORE pixels stay void.
    """
    sem = np.asarray(sem)
    things, stuff = set(thing_classes), set(stuff_classes)
    present = set(np.unique(sem).tolist()) - {IGNORE}
    present |= {i.cls for i in insts}
    unknown = present - things - stuff
    if None in unknown:
        raise ValueError("instances must carry a class before merging")
    if unknown:
        raise ValueError(f"classes {sorted(unknown)} are neither thing nor stuff")

    ids = np.zeros(sem.shape, dtype=np.int32)
    segments: dict[int, Segment] = {}
    next_id = 1
    for inst in sorted(insts, key=lambda i: -i.score):
        if inst.cls not in things:
            raise ValueError(f"instance class {inst.cls} is not a thing class")
        if inst.mask.shape != sem.shape:
            raise ValueError("instance mask and label map differ in shape")
        area = inst.area
        if area == 0:
            continue
        free = inst.mask & (ids == VOID)
        if free.sum() < overlap_keep_fraction * area:
            continue
        ids[free] = next_id
        segments[next_id] = Segment(int(inst.cls), True)
        next_id += 1

    for cls in sorted(present & stuff):
        region = (sem == cls) & (ids == VOID)
        if region.sum() < min_stuff_area:
            continue
        ids[region] = next_id
        segments[next_id] = Segment(int(cls), False)
        next_id += 1
    return PanopticMap(ids, segments)
