"""Per-pixel codecs: depth, semantic labels and the restoration identity."""
from __future__ import annotations

import numpy as np

from ..structures import IGNORE, MAX_DEPTH, DepthMap
from .palette import ColorTable


def encode_depth(d: DepthMap) -> np.ndarray:
    """Quantize meters in [0, 10] to one u8 level, copied to all channels.

    Invalid pixels are painted black; validity stays on the DepthMap.
    """
    depth = d.depth
    vals = depth[d.valid]
    if vals.size and (vals.min() < 0 or vals.max() > MAX_DEPTH or not np.isfinite(vals).all()):
        raise ValueError(f"depth outside [0, {MAX_DEPTH}] m")
    v = np.clip(np.floor(np.where(d.valid, depth, 0.0) * (255.0 / MAX_DEPTH)), 0, 255)
    v = np.where(d.valid, v, 0).astype(np.uint8)
    return np.repeat(v[..., None], 3, axis=2)


def decode_depth(img: np.ndarray) -> DepthMap:
    """Average the three channels and invert the linear quantization."""
    mean = np.asarray(img, dtype=np.float64).mean(axis=2)
    return DepthMap(np.clip(mean * (MAX_DEPTH / 255.0), 0.0, MAX_DEPTH))


def encode_semseg(labels: np.ndarray, ct: ColorTable) -> np.ndarray:
    """Paint each pixel with its class color; IGNORE pixels stay black."""
    labels = np.asarray(labels)
    keep = labels != IGNORE
    if keep.any() and (labels[keep].min() < 0 or labels[keep].max() >= ct.num_classes):
        raise ValueError(f"label outside [0, {ct.num_classes})")
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    out[keep] = ct.colors[labels[keep]]
    return out


def color_distances(img: np.ndarray, colors: np.ndarray) -> np.ndarray:
    """(H, W, K) L1 distance from every pixel to every palette color."""
    px = np.asarray(img, dtype=np.int16)
    cols = np.asarray(colors, dtype=np.int16)
    # channel by channel keeps the peak footprint at (H, W, K); 3 * 255 fits int16
    dist = np.abs(px[..., :1] - cols[:, 0])
    for c in range(1, cols.shape[1]):
        dist += np.abs(px[..., c:c + 1] - cols[:, c])
    return dist


def decode_semseg(img: np.ndarray, ct: ColorTable,
                  background: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-color labels (ties -> lowest id) and the full distance field.

    With ``background=True`` black joins the candidates and pixels closest to
    it are labeled IGNORE. The returned field always covers the K classes only.
    """
    dist = color_distances(img, ct.colors)
    labels = dist.argmin(axis=-1)
    if background:
        to_black = np.asarray(img, dtype=np.int32).sum(axis=-1)
        labels = np.where(to_black < dist.min(axis=-1), IGNORE, labels)
    return labels.astype(np.int64), dist


def restoration_codec(img: np.ndarray) -> np.ndarray:
    """Restoration targets already live in RGB space."""
    return img
