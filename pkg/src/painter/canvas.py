"""Stitched two-pair canvases and block-wise patch masks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class Canvas:
    input_canvas: np.ndarray
    output_canvas: np.ndarray

    def __post_init__(self):
        if self.input_canvas.shape != self.output_canvas.shape:
            raise ValueError("input and output canvases differ in shape")


@dataclass
class MaskPlan:
    """Masked patch indices (row-major) over a (rows, cols) patch grid."""

    grid: tuple[int, int]
    masked: np.ndarray
    ratio: float

    def __post_init__(self):
        self.masked = np.unique(np.asarray(self.masked, dtype=np.int64))
        n = self.grid[0] * self.grid[1]
        if self.masked.size and (self.masked[0] < 0 or self.masked[-1] >= n):
            raise ValueError("mask index outside the grid")

    @property
    def fraction(self) -> float:
        return self.masked.size / (self.grid[0] * self.grid[1])

    def to_grid(self) -> np.ndarray:
        """Boolean (rows, cols) array, True where masked."""
        m = np.zeros(self.grid[0] * self.grid[1], dtype=bool)
        m[self.masked] = True
        return m.reshape(self.grid)

    def to_pixels(self, patch_size: int) -> np.ndarray:
        """Boolean (H, W) pixel mask of the masked patches."""
        g = self.to_grid()
        return np.repeat(np.repeat(g, patch_size, axis=0), patch_size, axis=1)


def _stack(a: np.ndarray, b: np.ndarray, orientation: str) -> np.ndarray:
    if orientation == "vertical":
        return np.concatenate([a, b], axis=0)
    if orientation == "horizontal":
        return np.concatenate([a, b], axis=1)
    raise ValueError(f"unknown orientation {orientation!r}")


def split_canvas(canvas: np.ndarray, orientation: str = "vertical") -> tuple[np.ndarray, np.ndarray]:
    """Inverse of stitching: (first, second) halves."""
    if orientation == "vertical":
        h = canvas.shape[0] // 2
        return canvas[:h], canvas[h:]
    w = canvas.shape[1] // 2
    return canvas[:, :w], canvas[:, w:]


def stitch_training_sample(pair_a: tuple[np.ndarray, np.ndarray],
                           pair_b: tuple[np.ndarray, np.ndarray],
                           orientation: str = "vertical") -> Canvas:
    """Stack two (input, target) pairs of one task, ``pair_a`` first."""
    shapes = {x.shape for x in (*pair_a, *pair_b)}
    if len(shapes) != 1:
        raise ValueError(f"pair images must share one shape, got {sorted(shapes)}")
    return Canvas(_stack(pair_a[0], pair_b[0], orientation),
                  _stack(pair_a[1], pair_b[1], orientation))


def sample_block_mask(grid: tuple[int, int], ratio: float, rng: np.random.Generator,
                      min_block_patches: int = 4,
                      aspect: tuple[float, float] = (0.3, 1 / 0.3)) -> MaskPlan:
    """Union random rectangles of patches until at least ``ratio`` is masked.

    Each block has a log-uniform aspect ratio and an area between
    ``min_block_patches`` and the number of patches still needed, which
    keeps the overshoot below one small block.
    """
    if not 0 < ratio <= 1:
        raise ValueError(f"mask ratio must lie in (0, 1], got {ratio}")
    rows, cols = grid
    total = rows * cols
    if total < min_block_patches or min(rows, cols) < 1:
        raise ValueError(f"grid {grid} cannot host a {min_block_patches}-patch block")
    target = int(math.ceil(ratio * total - 1e-9))
    mask = np.zeros((rows, cols), dtype=bool)
    if target >= total:
        mask[:] = True
        return MaskPlan(grid, np.flatnonzero(mask), ratio)
    log_aspect = (math.log(aspect[0]), math.log(aspect[1]))
    count = 0
    stalls = 0
    while count < target:
        need = target - count
        max_area = max(min_block_patches, need)
        area = rng.uniform(min_block_patches, max_area)
        ar = math.exp(rng.uniform(*log_aspect))
        h = int(round(math.sqrt(area * ar)))
        w = int(round(math.sqrt(area / ar)))
        if 0 < h <= rows and 0 < w <= cols:
            top = int(rng.integers(0, rows - h + 1))
            left = int(rng.integers(0, cols - w + 1))
            block = mask[top:top + h, left:left + w]
            added = int((~block).sum())
            if 0 < added <= need + min_block_patches - 1:
                block[:] = True
                count += added
                stalls = 0
                continue
        stalls += 1
        if stalls > 100:
            # fragmented leftovers: finish with single patches
            free = np.flatnonzero(~mask.ravel())
            pick = rng.choice(free, size=need, replace=False)
            mask.flat[pick] = True
            count += need
    return MaskPlan(grid, np.flatnonzero(mask), ratio)


def bottom_half_plan(grid: tuple[int, int], orientation: str = "vertical") -> MaskPlan:
    rows, cols = grid
    idx = np.arange(rows * cols).reshape(rows, cols)
    half = idx[rows // 2:] if orientation == "vertical" else idx[:, cols // 2:]
    return MaskPlan(grid, half.ravel(), 0.5)


def build_inference_canvas(prompt: tuple[np.ndarray, np.ndarray], query_input: np.ndarray,
                           patch_size: int, orientation: str = "vertical"
                           ) -> tuple[Canvas, MaskPlan]:
    """Prompt pair first, query second; the query's output half is fully masked."""
    p_in, p_out = prompt
    if not (p_in.shape == p_out.shape == query_input.shape):
        raise ValueError("prompt and query images must share one shape")
    h, w = query_input.shape[:2]
    if h % patch_size or w % patch_size:
        raise ValueError(f"image {h}x{w} is not divisible by patch size {patch_size}")
    canvas = Canvas(_stack(p_in, query_input, orientation),
                    _stack(p_out, np.zeros_like(p_out), orientation))
    ch, cw = canvas.input_canvas.shape[:2]
    return canvas, bottom_half_plan((ch // patch_size, cw // patch_size), orientation)
