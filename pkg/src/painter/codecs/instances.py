"""Class-agnostic instance masks colored by the location of their center."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..structures import Instance
from .palette import location_color, snap_location


@dataclass(frozen=True)
class InstanceDecodeConfig:
    color_threshold: int = 18
    min_area: int = 16
    nms_sigma: float = 2.0
    nms_keep: float = 0.3


def encode_instances(insts: list[Instance], h: int, w: int) -> np.ndarray:
    """Paint every mask with its center's location color, largest first."""
    out = np.zeros((h, w, 3), dtype=np.uint8)
    for inst in insts:
        if not inst.mask.any():
            raise ValueError("instance with an empty mask")
        if inst.mask.shape != (h, w):
            raise ValueError(f"mask shape {inst.mask.shape} != ({h}, {w})")
        r, c = inst.center
        if not (0 <= r < h and 0 <= c < w):
            raise ValueError(f"instance center {inst.center} outside the image")
    # stable sort: equal areas keep input order
    for inst in sorted(insts, key=lambda i: -i.area):
        out[inst.mask] = location_color(inst.center, h, w)
    return out


def decode_instances(img: np.ndarray,
                     cfg: InstanceDecodeConfig = InstanceDecodeConfig()) -> list[Instance]:
    """Group pixels by their nearest location color, then de-duplicate.

    Each pixel is assigned to its L1-nearest palette color if that color lies
    within ``color_threshold``; every color with at least ``min_area`` pixels
    becomes a candidate mask scored ``1 - meanL1 / 765``. Candidates go
    through :func:`matrix_nms`.
    """
    img = np.asarray(img, dtype=np.int64)
    h, w, _ = img.shape
    flat = img.reshape(-1, 3)
    snapped = snap_location(flat)
    dist = np.abs(flat - snapped).sum(axis=1)
    ok = dist <= cfg.color_threshold
    if not ok.any():
        return []
    keys = snapped[ok] @ np.array([1 << 16, 1 << 8, 1])
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    pix = np.flatnonzero(ok)
    insts = []
    for j, n in enumerate(counts):
        if n < cfg.min_area:
            continue
        sel = inverse == j
        mask = np.zeros(h * w, dtype=bool)
        mask[pix[sel]] = True
        score = 1.0 - dist[pix[sel]].mean() / (3 * 255)
        insts.append(Instance(mask=mask.reshape(h, w), score=float(score)))
    return matrix_nms(insts, sigma=cfg.nms_sigma, keep_threshold=cfg.nms_keep)


def mask_iou_matrix(masks: np.ndarray) -> np.ndarray:
    m = masks.reshape(len(masks), -1).astype(np.float64)
    inter = m @ m.T
    area = m.sum(axis=1)
    union = area[:, None] + area[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def matrix_nms(insts: list[Instance], sigma: float = 2.0,
               keep_threshold: float = 0.3) -> list[Instance]:
    """Gaussian Matrix NMS (class-agnostic).

    For each instance j, decay_j = min over higher-scored i of
    exp(-sigma * (iou_ij^2 - maxiou_i^2)), where maxiou_i is the largest IoU
    of i with any instance scored above it. Returns the survivors, highest
    score first, with decayed scores and untouched masks.
    """
    if not insts:
        return []
    order = sorted(range(len(insts)), key=lambda i: -insts[i].score)
    ranked = [insts[i] for i in order]
    scores = np.array([i.score for i in ranked])
    iou = np.triu(mask_iou_matrix(np.stack([i.mask for i in ranked])), k=1)
    compensate = iou.max(axis=0)  # max IoU of each i with a higher-scored one
    decay = np.exp(-sigma * (iou ** 2 - compensate[:, None] ** 2))
    # only pairs (i above j) compete; the diagonal/lower part must not win the min
    decay = np.where(np.triu(np.ones_like(iou, dtype=bool), k=1), decay, np.inf)
    coeff = np.minimum(decay.min(axis=0), 1.0)
    new_scores = scores * coeff
    out = []
    for inst, s in zip(ranked, new_scores):
        if s >= keep_threshold:
            out.append(Instance(mask=inst.mask, center=inst.center, cls=inst.cls, score=float(s)))
    return out
