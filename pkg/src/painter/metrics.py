"""Evaluation metrics for depth, segmentation, panoptic, keypoint and restoration tasks."""
from __future__ import annotations

import csv
import io
import math
from collections.abc import Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .structures import IGNORE, VOID, DepthMap, Keypoint, PanopticMap

# Per-joint COCO keypoint constants (nose ... right ankle).
COCO_SIGMAS = np.array([.26, .25, .25, .35, .35, .79, .79, .72, .72, .62, .62,
                        1.07, 1.07, .87, .87, .89, .89]) / 10.0

PSNR_INF = float("inf")


def depth_metrics(pred: DepthMap, gt: DepthMap) -> dict[str, float]:
    """RMSE, mean absolute relative error and delta<1.25 over valid gt pixels.

    A.Rel and delta_1 skip pixels with zero gt depth.
    """
    valid = gt.valid & pred.valid
    if not valid.any():
        raise ValueError("no valid depth pixels")
    p, g = pred.depth[valid], gt.depth[valid]
    rmse = float(np.sqrt(np.mean((p - g) ** 2)))
    pos = g > 0
    if pos.any():
        pp, gg = p[pos], g[pos]
        arel = float(np.mean(np.abs(pp - gg) / gg))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.maximum(pp / gg, gg / pp)
        delta1 = float(np.mean(ratio < 1.25))
    else:
        arel, delta1 = float("nan"), float("nan")
    return {"rmse": rmse, "arel": arel, "delta1": delta1}


def confusion(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """(L, L) counts, rows = gt, cols = pred, IGNORE gt pixels skipped.

    Predictions outside [0, L) (IGNORE included) count as misses only.
    """
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    keep = gt != IGNORE
    pred, gt = pred[keep], gt[keep]
    ok = (pred >= 0) & (pred < num_classes)
    cm = np.bincount(gt[ok] * num_classes + pred[ok], minlength=num_classes ** 2)
    cm = cm.reshape(num_classes, num_classes)
    missed = np.bincount(gt[~ok], minlength=num_classes)
    return np.concatenate([cm, missed[:, None]], axis=1)


def miou_from_confusion(cm: np.ndarray) -> tuple[float, np.ndarray]:
    L = cm.shape[0]
    tp = np.diag(cm[:, :L]).astype(np.float64)
    fn = cm.sum(axis=1) - tp
    fp = cm[:, :L].sum(axis=0) - tp
    denom = tp + fp + fn
    iou = np.full(L, np.nan)
    present = denom > 0
    iou[present] = tp[present] / denom[present]
    return (float(np.nanmean(iou)) if present.any() else float("nan")), iou


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> tuple[float, np.ndarray]:
    """Mean IoU over classes present in gt or pred; per-class IoU (NaN if absent)."""
    if np.shape(pred) != np.shape(gt):
        raise ValueError("prediction and ground truth differ in shape")
    return miou_from_confusion(confusion(pred, gt, num_classes))


def panoptic_quality(pred: PanopticMap, gt: PanopticMap) -> dict[str, float]:
    """PQ, SQ, RQ with unique matching at IoU > 0.5, averaged over classes.

    Void pixels in the gt are removed from both maps before IoUs are taken;
    predicted segments lying mostly (> 50%) on gt void are not counted as FP.
    """
    if pred.ids.shape != gt.ids.shape:
        raise ValueError("panoptic maps differ in shape")
    g = gt.ids.ravel().astype(np.int64)
    p = pred.ids.ravel().astype(np.int64)
    off = int(max(g.max(initial=0), p.max(initial=0))) + 1
    pairs, counts = np.unique(g * off + p, return_counts=True)
    inter = {(int(k // off), int(k % off)): int(c) for k, c in zip(pairs, counts)}
    g_area = dict(zip(*np.unique(g, return_counts=True)))
    p_area = dict(zip(*np.unique(p, return_counts=True)))
    p_void_overlap = {sid: inter.get((VOID, sid), 0) for sid in pred.segments}

    stats: dict[int, list[float]] = {}  # cls -> [iou_sum, tp, fp, fn]
    matched_g, matched_p = set(), set()
    for (gi, pi), c in inter.items():
        if gi == VOID or pi == VOID:
            continue
        gs, ps = gt.segments[gi], pred.segments[pi]
        if gs.cls != ps.cls:
            continue
        union = g_area[gi] + p_area[pi] - c - p_void_overlap.get(pi, 0)
        iou = c / union
        if iou > 0.5:
            s = stats.setdefault(gs.cls, [0.0, 0, 0, 0])
            s[0] += iou
            s[1] += 1
            matched_g.add(gi)
            matched_p.add(pi)
    for gi, seg in gt.segments.items():
        if gi not in matched_g and g_area.get(gi, 0) > 0:
            stats.setdefault(seg.cls, [0.0, 0, 0, 0])[3] += 1
    for pi, seg in pred.segments.items():
        area = p_area.get(pi, 0)
        if pi in matched_p or area == 0:
            continue
        if p_void_overlap.get(pi, 0) / area > 0.5:
            continue
        stats.setdefault(seg.cls, [0.0, 0, 0, 0])[2] += 1
    if not stats:
        return {"pq": 1.0 if not gt.segments and not pred.segments else 0.0,
                "sq": 0.0, "rq": 0.0}
    pqs, sqs, rqs = [], [], []
    for iou_sum, tp, fp, fn in stats.values():
        denom = tp + 0.5 * fp + 0.5 * fn
        pqs.append(iou_sum / denom if denom else 0.0)
        sqs.append(iou_sum / tp if tp else 0.0)
        rqs.append(tp / denom if denom else 0.0)
    return {"pq": float(np.mean(pqs)), "sq": float(np.mean(sqs)), "rq": float(np.mean(rqs))}


def oks(pred: Sequence[Keypoint], gt: Sequence[Keypoint], area: float,
        sigmas: np.ndarray = COCO_SIGMAS) -> float:
    """Object keypoint similarity of one prediction against one gt instance.

    Uses kappa_i = 2 * sigma_i and s^2 = area, as in the COCO evaluator.
    Joints absent from ``gt`` are invisible; joints missing from ``pred``
    count as infinitely far.
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if area <= 0:
        raise ValueError("object area must be positive")
    by_cls = {k.cls: k for k in pred}
    total, n = 0.0, 0
    for g in gt:
        if g.cls >= len(sigmas):
            raise ValueError(f"no sigma for joint {g.cls}")
        n += 1
        p = by_cls.get(g.cls)
        if p is None:
            continue
        d2 = (p.x - g.x) ** 2 + (p.y - g.y) ** 2
        kappa = 2 * sigmas[g.cls]
        total += math.exp(-d2 / (2 * area * kappa ** 2))
    return total / n if n else 0.0


def oks_ap(preds: Sequence[Sequence[Keypoint]], gts: Sequence[Sequence[Keypoint]],
           areas: Sequence[float], sigmas: np.ndarray = COCO_SIGMAS,
           scores: Sequence[float] | None = None) -> float:
    """AP over OKS thresholds 0.50:0.05:0.95, one person per image.

    Detections are ranked by ``scores`` (default: mean keypoint score) and
    precision is read at 101 recall points, as in COCO.
    """
    if sigmas is None:
        raise ValueError("keypoint sigmas are required")
    if not (len(preds) == len(gts) == len(areas)):
        raise ValueError("preds, gts and areas must align")
    n = len(gts)
    if n == 0:
        return float("nan")
    if scores is None:
        scores = [float(np.mean([k.score for k in p])) if p else 0.0 for p in preds]
    sims = np.array([oks(p, g, a, sigmas) for p, g, a in zip(preds, gts, areas)])
    order = np.argsort(-np.asarray(scores), kind="stable")
    has_det = np.array([len(p) > 0 for p in preds])[order]
    sims = sims[order]
    aps = []
    for t in np.linspace(0.5, 0.95, 10):
        tp = ((sims >= t) & has_det).astype(np.float64)
        fp = ((sims < t) & has_det).astype(np.float64)
        ctp, cfp = np.cumsum(tp), np.cumsum(fp)
        recall = ctp / n
        precision = ctp / np.maximum(ctp + cfp, np.finfo(float).eps)
        # monotone precision envelope, then 101-point interpolation
        precision = np.maximum.accumulate(precision[::-1])[::-1]
        rs = np.linspace(0, 1, 101)
        idx = np.searchsorted(recall, rs, side="left")
        q = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
        aps.append(q.mean())
    return float(np.mean(aps))


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for u8 images; ``inf`` when identical."""
    if pred.shape != gt.shape:
        raise ValueError("images differ in shape")
    mse = np.mean((np.asarray(pred, np.float64) - np.asarray(gt, np.float64)) ** 2)
    if mse == 0:
        return PSNR_INF
    return float(10 * np.log10(255.0 ** 2 / mse))


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    r = np.arange(window) - (window - 1) / 2
    k = np.exp(-r ** 2 / (2 * sigma ** 2))
    return k / k.sum()


def ssim(pred: np.ndarray, gt: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM with an 11x11 Gaussian window (valid positions only), averaged
    over channels. C1 = (0.01*255)^2, C2 = (0.03*255)^2.
    """
    if pred.shape != gt.shape:
        raise ValueError("images differ in shape")
    x = np.asarray(pred, np.float64)
    y = np.asarray(gt, np.float64)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if min(x.shape[:2]) < window:
        raise ValueError(f"images smaller than the {window}px SSIM window")
    k = _gaussian_kernel(window, sigma)
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    half = window // 2

    def blur(a):
        a = correlate1d(a, k, axis=0, mode="constant")
        a = correlate1d(a, k, axis=1, mode="constant")
        return a[half:a.shape[0] - half, half:a.shape[1] - half]

    vals = []
    for ch in range(x.shape[2]):
        a, b = x[..., ch], y[..., ch]
        mu_a, mu_b = blur(a), blur(b)
        saa = blur(a * a) - mu_a ** 2
        sbb = blur(b * b) - mu_b ** 2
        sab = blur(a * b) - mu_a * mu_b
        s = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)
             / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)))
        vals.append(s.mean())
    return float(np.mean(vals))


# --- reports ----------------------------------------------------------------------

REPORT_COLUMNS = ["rmse", "arel", "delta1", "miou", "pq", "ap", "psnr", "ssim"]


def format_report(rows: Sequence[dict], fmt: str = "text") -> str:
    """Render metric rows (one per task) as CSV or an aligned text table."""
    cols = ["task"] + [c for c in REPORT_COLUMNS if any(c in r for r in rows)]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in cols})
        return buf.getvalue()

    def cell(v):
        if isinstance(v, float):
            return "inf" if math.isinf(v) else f"{v:.4f}"
        return "-" if v is None or v == "" else str(v)

    table = [cols] + [[cell(r.get(c, "")) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
    lines = ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
