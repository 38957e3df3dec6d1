"""Task-level decoding and dataset scoring on top of the codecs and metrics."""
from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .codecs import (InstanceDecodeConfig, KeypointCodecConfig, decode_depth, decode_instances,
                     decode_keypoints, decode_semseg)
from .metrics import (confusion, depth_metrics, miou_from_confusion, oks, oks_ap,
                      panoptic_quality, psnr, ssim)
from .structures import DepthMap, Instance, Keypoint, PanopticMap, Segment
from .synth import RESTORATION_KINDS, scene_tables

RESTORATION_TASKS = tuple(RESTORATION_KINDS)


def decode_prediction(task: str, img: np.ndarray, num_classes: int | None = None,
                      inst_cfg: InstanceDecodeConfig = InstanceDecodeConfig(),
                      kp_cfg: KeypointCodecConfig = KeypointCodecConfig()):
    """Turn a predicted (or encoded) u8 image back into the task's native form."""
    if task == "depth":
        return decode_depth(img)
    if task == "semseg":
        if not num_classes:
            raise ValueError("semseg decoding needs num_classes")
        return decode_semseg(img, scene_tables(num_classes), background=True)[0]
    if task == "keypoint":
        return decode_keypoints(img, peak_threshold=kp_cfg.peak_threshold)
    if task == "instance":
        return decode_instances(img, inst_cfg)
    if task in RESTORATION_TASKS:
        return np.asarray(img, dtype=np.uint8)
    raise ValueError(f"unknown task {task!r}")


def keypoint_area(kps: Sequence[Keypoint]) -> float:
    """Bounding-box area of a keypoint set, floored at one pixel."""
    if not kps:
        return 1.0
    xs = [k.x for k in kps]
    ys = [k.y for k in kps]
    return max((max(xs) - min(xs)) * (max(ys) - min(ys)), 1.0)


def _instance_panoptic(insts: Sequence[Instance], shape) -> PanopticMap:
    ids = np.zeros(shape, dtype=np.int32)
    segments = {}
    for n, inst in enumerate(sorted(insts, key=lambda i: -i.score), start=1):
        free = inst.mask & (ids == 0)
        if free.any():
            ids[free] = n
            segments[n] = Segment(0, True)
    return PanopticMap(ids, segments)


def evaluate(task: str, preds: Sequence, gts: Sequence,
             num_classes: int | None = None) -> dict[str, float]:
    """Dataset-level metrics for aligned native predictions and ground truths.

    Depth errors pool every valid pixel; mIoU uses one accumulated
    confusion matrix; keypoint AP uses the gt bounding-box area as scale;
    instance quality is class-agnostic PQ; restoration averages PSNR/SSIM.
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground truths")
    if not gts:
        raise ValueError("nothing to evaluate")
    if task == "depth":
        pool = lambda ds: DepthMap(np.concatenate([d.depth.ravel() for d in ds])[None],
                                   np.concatenate([d.valid.ravel() for d in ds])[None])
        return depth_metrics(pool(preds), pool(gts))
    if task == "semseg":
        if not num_classes:
            raise ValueError("semseg evaluation needs num_classes")
        cm = sum(confusion(p, g, num_classes) for p, g in zip(preds, gts))
        return {"miou": miou_from_confusion(cm)[0]}
    if task == "keypoint":
        return {"ap": oks_ap(preds, gts, [keypoint_area(g) for g in gts])}
    if task == "instance":
        shape = lambda insts: insts[0].mask.shape
        pqs = []
        for p, g in zip(preds, gts):
            if not g and not p:
                pqs.append(1.0)
                continue
            hw = shape(g) if g else shape(p)
            pqs.append(panoptic_quality(_instance_panoptic(p, hw), _instance_panoptic(g, hw))["pq"])
        return {"pq": float(np.mean(pqs))}
    if task in RESTORATION_TASKS:
        return {"psnr": float(np.mean([psnr(p, g) for p, g in zip(preds, gts)])),
                "ssim": float(np.mean([ssim(p, g) for p, g in zip(preds, gts)]))}
    raise ValueError(f"unknown task {task!r}")


def score_prediction(task: str, pred_u8: np.ndarray, reference, num_classes: int | None = None
                     ) -> float:
    """One-image quality score, higher is better, for ranking prompts.

    ``reference`` is the native ground truth for the query.
    """
    native = decode_prediction(task, pred_u8, num_classes)
    if task == "depth":
        return -depth_metrics(native, reference)["rmse"]
    if task == "semseg":
        value = miou_from_confusion(confusion(native, reference, num_classes))[0]
        return 0.0 if np.isnan(value) else value
    if task == "keypoint":
        return oks(native, reference, keypoint_area(reference)) if reference else 0.0
    if task == "instance":
        return evaluate(task, [native], [reference])["pq"]
    if task in RESTORATION_TASKS:
        return min(psnr(native, reference), 100.0)
    raise ValueError(f"unknown task {task!r}")
