"""Deterministic synthetic scenes with exact multi-task ground truth.

Shapes are rendered with a class hue whose brightness falls off with
distance, so both the class and the depth of every pixel are recoverable
from the image alone.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .codecs import (encode_depth, encode_instances, encode_keypoints, encode_semseg,
                     generate_color_table, semseg_base)
from .codecs.palette import ColorTable
from .data import TaskSample
from .structures import IGNORE, MAX_DEPTH, DepthMap, Instance, Keypoint

# COCO joint order: nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles.
# (x, y) in a unit box, figure facing the viewer.
STICK_TEMPLATE = np.array([
    [0.50, 0.08], [0.45, 0.05], [0.55, 0.05], [0.40, 0.08], [0.60, 0.08],
    [0.30, 0.25], [0.70, 0.25], [0.22, 0.42], [0.78, 0.42], [0.16, 0.58], [0.84, 0.58],
    [0.38, 0.58], [0.62, 0.58], [0.36, 0.78], [0.64, 0.78], [0.35, 0.97], [0.65, 0.97],
])
STICK_LIMBS = [(5, 6), (5, 7), (7, 9), (6, 8), (8, 10), (5, 11), (6, 12), (11, 12),
               (11, 13), (13, 15), (12, 14), (14, 16), (0, 1), (0, 2), (1, 3), (2, 4)]

BACKGROUND_DEPTH = MAX_DEPTH


@dataclass(frozen=True)
class SceneSpec:
    size: int = 64
    shape_count: tuple[int, int] = (1, 3)
    kinds: tuple[str, ...] = ("rectangle", "ellipse", "stick")
    num_classes: int = 8
    extent: tuple[int, int] = (16, 32)
    depth_range: tuple[float, float] = (0.5, 9.5)
    allow_overlap: bool = False
    noise: float = 3.0
    max_retries: int = 200
    # raise instead of keeping the shapes placed so far when a scene is too crowded
    strict_placement: bool = False


@dataclass
class SceneBundle:
    image: np.ndarray
    depth: DepthMap
    labels: np.ndarray
    keypoints: list[Keypoint]
    instances: list[Instance]


def class_color(k: int, num_classes: int) -> np.ndarray:
    """Saturated base color for class ``k`` (evenly spaced hues)."""
    r, g, b = colorsys.hsv_to_rgb(k / num_classes, 0.85, 1.0)
    return np.array([r, g, b]) * 255.0


def shade(depth: float) -> float:
    """Brightness multiplier: 1 at the camera, about 0.4 at 10 m."""
    return 1.0 - 0.06 * depth


def _draw_line(mask: np.ndarray, p0, p1, width: float) -> None:
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w]
    (x0, y0), (x1, y1) = p0, p1
    dx, dy = x1 - x0, y1 - y0
    seg = dx * dx + dy * dy
    t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / seg if seg > 0 else 0.0, 0, 1)
    d2 = (xx - (x0 + t * dx)) ** 2 + (yy - (y0 + t * dy)) ** 2
    mask |= d2 <= (width / 2) ** 2


def _shape_mask(kind: str, box: tuple[int, int, int, int], size: int):
    """Mask and (for stick figures) keypoint coordinates for one shape in ``box``."""
    top, left, bh, bw = box
    mask = np.zeros((size, size), dtype=bool)
    kps = None
    if kind == "rectangle":
        mask[top:top + bh, left:left + bw] = True
    elif kind == "ellipse":
        yy, xx = np.mgrid[0:size, 0:size]
        cy, cx = top + (bh - 1) / 2, left + (bw - 1) / 2
        mask = ((yy - cy) / (bh / 2)) ** 2 + ((xx - cx) / (bw / 2)) ** 2 <= 1.0
    elif kind == "stick":
        pts = np.column_stack([left + STICK_TEMPLATE[:, 0] * (bw - 1),
                               top + STICK_TEMPLATE[:, 1] * (bh - 1)])
        pts = np.round(pts)
        width = max(2.0, bw / 8)
        for a, b in STICK_LIMBS:
            _draw_line(mask, pts[a], pts[b], width)
        yy, xx = np.mgrid[0:size, 0:size]
        hx, hy = pts[0]
        mask |= (xx - hx) ** 2 + (yy - hy) ** 2 <= (bw / 7) ** 2
        kps = pts
    else:
        raise ValueError(f"unknown shape kind {kind!r}")
    return mask, kps


def _boxes_overlap(a, b, gap: int = 1) -> bool:
    return not (a[0] + a[2] + gap <= b[0] or b[0] + b[2] + gap <= a[0]
                or a[1] + a[3] + gap <= b[1] or b[1] + b[3] + gap <= a[1])


def gen_scene(spec: SceneSpec, rng: np.random.Generator) -> SceneBundle:
    """Render one scene and its depth, labels, keypoints and instances."""
    n = int(rng.integers(spec.shape_count[0], spec.shape_count[1] + 1))
    S = spec.size
    if spec.extent[1] > S or spec.extent[0] < 4:
        raise ValueError(f"shape extent {spec.extent} does not fit a {S}px scene")
    yy, xx = np.mgrid[0:S, 0:S]
    # background: a dim textured plane at 10 m
    tint = rng.uniform(60, 100)
    img = np.empty((S, S, 3))
    img[:] = tint + 8 * np.sin(xx / rng.uniform(3, 8))[..., None] * np.array([1.0, 0.9, 0.8])
    depth = np.full((S, S), BACKGROUND_DEPTH)
    labels = np.full((S, S), IGNORE, dtype=np.int64)
    keypoints: list[Keypoint] = []
    instances: list[Instance] = []
    boxes: list[tuple[int, int, int, int]] = []
    for _ in range(n):
        placed = False
        for _attempt in range(spec.max_retries):
            kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
            bh = int(rng.integers(spec.extent[0], spec.extent[1] + 1))
            bw = int(rng.integers(spec.extent[0], spec.extent[1] + 1))
            if kind == "stick":
                bh = max(bh, spec.extent[1] * 3 // 4)
                bw = max(spec.extent[0], bh * 2 // 3)
            box = (int(rng.integers(0, S - bh + 1)), int(rng.integers(0, S - bw + 1)), bh, bw)
            if spec.allow_overlap or not any(_boxes_overlap(box, b) for b in boxes):
                placed = True
                break
        if not placed:
            if spec.strict_placement:
                raise RuntimeError(f"could not place shape {len(boxes) + 1} of {n} "
                                   f"without overlap after {spec.max_retries} tries")
            # the canvas is too crowded for another shape; keep what fits
            break
        boxes.append(box)
        cls = int(rng.integers(spec.num_classes))
        d = float(rng.uniform(*spec.depth_range))
        mask, pts = _shape_mask(kind, box, S)
        img[mask] = class_color(cls, spec.num_classes) * shade(d)
        depth[mask] = d
        labels[mask] = cls
        if pts is not None:
            keypoints.extend(Keypoint(j, float(x), float(y)) for j, (x, y) in enumerate(pts))
        instances.append(Instance(mask=mask, cls=cls))
    if spec.noise > 0:
        img = img + rng.normal(0, spec.noise, img.shape)
    image = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
    # later shapes may cover earlier ones when overlap is allowed
    for i, inst in enumerate(instances):
        for later in instances[i + 1:]:
            inst.mask = inst.mask & ~later.mask
    instances = [Instance(mask=i.mask, cls=i.cls) for i in instances if i.mask.any()]
    return SceneBundle(image, DepthMap(depth), labels, keypoints, instances)


# --- restoration corruptions ------------------------------------------------------

def corrupt(img: np.ndarray, kind: str, rng: np.random.Generator, **params) -> np.ndarray:
    """Synthetic degradations: ``noise`` (sigma), ``rain`` (count, length,
    strength) and ``darken`` (gamma).
    """
    x = np.asarray(img, dtype=np.float64)
    if kind == "noise":
        sigma = params.get("sigma", 15.0)
        if sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        out = np.floor(x + rng.normal(0.0, sigma, x.shape) + 0.5) if sigma > 0 else x
    elif kind == "rain":
        count = params.get("count", 20)
        length = params.get("length", (6, 14))
        strength = params.get("strength", 70.0)
        if count < 0 or strength < 0:
            raise ValueError("rain count and strength must be >= 0")
        h, w = x.shape[:2]
        streaks = np.zeros((h, w), dtype=bool)
        for _ in range(count):
            angle = np.deg2rad(rng.normal(-15.0, 5.0))
            ln = rng.uniform(*length)
            x0, y0 = rng.uniform(0, w), rng.uniform(0, h)
            p1 = (x0 + ln * np.sin(angle), y0 + ln * np.cos(angle))
            _draw_line(streaks, (x0, y0), p1, 1.0)
        out = x + strength * streaks[..., None]
    elif kind == "darken":
        gamma = params.get("gamma", 2.5)
        if gamma <= 0:
            raise ValueError("gamma must be > 0")
        out = np.floor(255.0 * (x / 255.0) ** gamma + 0.5)
    else:
        raise ValueError(f"unknown corruption {kind!r}")
    return np.clip(out, 0, 255).astype(np.uint8)


RESTORATION_KINDS = {"denoise": "noise", "derain": "rain", "lowlight": "darken"}


def scene_tables(num_classes: int) -> ColorTable:
    return generate_color_table(semseg_base(num_classes), num_classes)


def task_sample(bundle: SceneBundle, task: str, ct: ColorTable | None = None,
                rng: np.random.Generator | None = None, kp_sigma: float = 2.0) -> TaskSample:
    """Encode one scene bundle for ``task``."""
    h, w = bundle.labels.shape
    if task == "depth":
        return TaskSample(task, bundle.image, encode_depth(bundle.depth))
    if task == "semseg":
        if ct is None:
            raise ValueError("semseg needs a color table")
        return TaskSample(task, bundle.image, encode_semseg(bundle.labels, ct))
    if task == "instance":
        return TaskSample(task, bundle.image, encode_instances(bundle.instances, h, w))
    if task == "keypoint":
        return TaskSample(task, bundle.image, encode_keypoints(bundle.keypoints, h, w,
                                                                sigma=kp_sigma))
    if task in RESTORATION_KINDS:
        if rng is None:
            raise ValueError("restoration tasks need an rng for the corruption")
        return TaskSample(task, corrupt(bundle.image, RESTORATION_KINDS[task], rng), bundle.image)
    raise ValueError(f"unknown task {task!r}")


def make_task_samples(task: str, n: int, spec: SceneSpec, seed: int) -> list[TaskSample]:
    """``n`` encoded samples for one task; scene i uses seed (seed, i)."""
    ct = scene_tables(spec.num_classes)
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        bundle = gen_scene(spec, rng)
        out.append(task_sample(bundle, task, ct, rng))
    return out
