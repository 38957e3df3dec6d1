"""Keypoints as an image: red = class-agnostic heatmaps, green/blue = class squares."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..structures import NUM_KEYPOINTS, Keypoint
from .dense import color_distances
from .palette import ColorTable, keypoint_color_table

HEATMAP_WINDOW = 17
CLASS_SQUARE = 9


@dataclass(frozen=True)
class KeypointCodecConfig:
    sigma: float = 2.0  # heatmap Gaussian, in pixels
    peak_threshold: float = 0.3  # minimum peak / 255 for a class to be reported


def gaussian_window(size: int = HEATMAP_WINDOW, sigma: float = 2.0) -> np.ndarray:
    """Discretized Gaussian with its center forced to exactly 255."""
    r = np.arange(size) - size // 2
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma ** 2))
    win = np.floor(g * 255 + 0.5).astype(np.uint8)
    win[size // 2, size // 2] = 255
    return win


def _paste(dst: np.ndarray, src: np.ndarray, cy: int, cx: int) -> None:
    """Overwrite ``dst`` with ``src`` centered at (cy, cx), clipped to bounds."""
    h, w = dst.shape[:2]
    half = src.shape[0] // 2
    y0, x0 = cy - half, cx - half
    ys, xs = max(y0, 0), max(x0, 0)
    ye, xe = min(y0 + src.shape[0], h), min(x0 + src.shape[1], w)
    if ys >= ye or xs >= xe:
        return
    dst[ys:ye, xs:xe] = src[ys - y0:ye - y0, xs - x0:xe - x0]


def encode_keypoints(kps: list[Keypoint], h: int, w: int,
                     ct2: ColorTable | None = None, sigma: float = 2.0) -> np.ndarray:
    """Render keypoints; later keypoints overwrite earlier ones where windows overlap."""
    ct2 = ct2 or keypoint_color_table()
    out = np.zeros((h, w, 3), dtype=np.uint8)
    heat = gaussian_window(HEATMAP_WINDOW, sigma)
    for kp in kps:
        if not 0 <= kp.cls < ct2.num_classes:
            raise ValueError(f"keypoint class {kp.cls} outside [0, {ct2.num_classes})")
        if not (0 <= kp.x < w and 0 <= kp.y < h):
            raise ValueError(f"keypoint ({kp.x}, {kp.y}) outside a {h}x{w} image")
        cy, cx = int(np.floor(kp.y + 0.5)), int(np.floor(kp.x + 0.5))
        cy, cx = min(cy, h - 1), min(cx, w - 1)
        _paste(out[..., 0], heat, cy, cx)
        square = np.broadcast_to(ct2.colors[kp.cls].astype(np.uint8), (CLASS_SQUARE, CLASS_SQUARE, 2))
        _paste(out[..., 1:], square, cy, cx)
    return out


def class_heatmaps(img: np.ndarray, ct2: ColorTable) -> np.ndarray:
    """(K, H, W) heatmaps: red channel masked by each pixel's nearest class."""
    img = np.asarray(img)
    segm = color_distances(img[..., 1:], ct2.colors).argmin(axis=-1)
    red = img[..., 0].astype(np.float64)
    return np.stack([(segm == k) * red for k in range(ct2.num_classes)])


def decode_keypoints(img: np.ndarray, ct2: ColorTable | None = None,
                     peak_threshold: float = 0.3) -> list[Keypoint]:
    """One keypoint per class at the heatmap argmax, refined a quarter pixel
    toward the higher neighbour. Classes with score below ``peak_threshold``
    are dropped.
    """
    ct2 = ct2 or keypoint_color_table()
    heatmaps = class_heatmaps(img, ct2)
    _, h, w = heatmaps.shape
    out = []
    for k, hm in enumerate(heatmaps):
        idx = int(hm.argmax())
        py, px = divmod(idx, w)
        score = hm[py, px] / 255.0
        if score < peak_threshold or score <= 0:
            continue
        x, y = float(px), float(py)
        if 0 < px < w - 1:
            x += 0.25 * np.sign(hm[py, px + 1] - hm[py, px - 1])
        if 0 < py < h - 1:
            y += 0.25 * np.sign(hm[py + 1, px] - hm[py - 1, px])
        out.append(Keypoint(cls=k, x=x, y=y, score=float(score)))
    return out


__all__ = ["encode_keypoints", "decode_keypoints", "class_heatmaps", "gaussian_window",
           "NUM_KEYPOINTS"]
