"""Native ground-truth containers shared by codecs, metrics and synthetic data."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Label value for ignored / background pixels in a label map.
IGNORE = 255

#: Panoptic segment id for void pixels.
VOID = 0

NUM_KEYPOINTS = 17
MAX_DEPTH = 10.0


@dataclass
class DepthMap:
    """Per-pixel depth in meters plus a validity mask."""

    depth: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.valid is None:
            self.valid = np.ones(self.depth.shape, dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.depth.shape:
            raise ValueError("depth and validity mask differ in shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass
class Keypoint:
    cls: int
    x: float
    y: float
    score: float = 1.0


@dataclass
class Instance:
    mask: np.ndarray
    center: tuple[float, float] | None = None
    cls: int | None = None
    score: float = 1.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.center is None:
            self.center = mask_centroid(self.mask)

    @property
    def area(self) -> int:
        return int(self.mask.sum())


def mask_centroid(mask: np.ndarray) -> tuple[float, float]:
    """(row, col) centroid of a binary mask, in pixel-center coordinates."""
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise ValueError("empty mask has no centroid")
    return float(rows.mean()), float(cols.mean())


@dataclass(frozen=True)
class Segment:
    cls: int
    is_thing: bool


@dataclass
class PanopticMap:
    """Segment-id image plus the id -> (class, is_thing) table. Id 0 is void."""

    ids: np.ndarray
    segments: dict[int, Segment] = field(default_factory=dict)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int32)
        present = set(np.unique(self.ids).tolist()) - {VOID}
        missing = present - set(self.segments)
        if missing:
            raise ValueError(f"segment ids {sorted(missing)} have no table entry")
