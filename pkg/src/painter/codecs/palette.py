"""Base-b color codes for categories and instance locations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Instance location grid: an 80x80 fine grid whose 6400 cells are written
# in mixed radix (16, 20, 20), one digit per channel.
LOCATION_RADIX = (16, 20, 20)
LOCATION_GRID = 80
LOCATION_MARGINS = tuple(255 // r for r in LOCATION_RADIX)  # (15, 12, 12)


@dataclass(frozen=True, eq=False)
class ColorTable:
    """Injective category -> color map.

    ``colors`` is a (K, channels) int array. ``base`` and ``margin`` describe
    the digit code that produced it.
    """

    colors: np.ndarray
    base: int
    margin: int

    def __post_init__(self):
        self.colors.setflags(write=False)

    @property
    def num_classes(self) -> int:
        return len(self.colors)

    @property
    def channels(self) -> int:
        return self.colors.shape[1]

    def __len__(self) -> int:
        return len(self.colors)


def generate_color_table(b: int, K: int, channels: int = 3) -> ColorTable:
    """Color for class k: write k in base ``b`` and step down from 255 by
    ``m = 255 // b`` per digit. Black stays reserved for background/ignore.
    """
    if b < 2:
        raise ValueError(f"base must be >= 2, got {b}")
    if channels not in (2, 3):
        raise ValueError("channels must be 2 or 3")
    if K > b ** channels:
        raise ValueError(f"{K} classes do not fit in {channels} base-{b} digits")
    m = 255 // b
    k = np.arange(K)
    if channels == 3:
        digits = np.stack([k // b ** 2, (k // b) % b, k % b], axis=1)
    else:
        digits = np.stack([k // b, k % b], axis=1)
    return ColorTable(colors=255 - digits * m, base=b, margin=m)


def semseg_base(num_classes: int) -> int:
    """Smallest base whose three digits cover ``num_classes`` categories."""
    b = 2
    while b ** 3 < num_classes:
        b += 1
    return b


def keypoint_color_table(num_classes: int = 17) -> ColorTable:
    """Two-channel keypoint class table, base ceil(sqrt(K)) (5 for 17 joints)."""
    b = int(np.ceil(np.sqrt(num_classes)))
    return generate_color_table(b, num_classes, channels=2)


def location_digits(cell: np.ndarray | int) -> np.ndarray:
    cell = np.asarray(cell)
    r0, r1, r2 = LOCATION_RADIX
    return np.stack([cell // (r1 * r2), (cell % (r1 * r2)) // r2, cell % r2], axis=-1)


def location_colors() -> np.ndarray:
    """All 6400 instance-location colors, indexed by fine-grid cell."""
    digits = location_digits(np.arange(LOCATION_GRID * LOCATION_GRID))
    return 255 - digits * np.asarray(LOCATION_MARGINS)


def location_cell(center: tuple[float, float], h: int, w: int) -> int:
    """Fine-grid cell index of a (row, col) pixel position."""
    row, col = center
    r = min(max(int(np.floor(row / h * LOCATION_GRID)), 0), LOCATION_GRID - 1)
    c = min(max(int(np.floor(col / w * LOCATION_GRID)), 0), LOCATION_GRID - 1)
    return r * LOCATION_GRID + c


def location_color(center: tuple[float, float], h: int, w: int) -> tuple[int, int, int]:
    d = location_digits(location_cell(center, h, w))
    return tuple(int(v) for v in 255 - d * np.asarray(LOCATION_MARGINS))


def snap_location(pixels: np.ndarray) -> np.ndarray:
    """Nearest location color (in L1) for each pixel.

    The location palette is the full product of its per-channel digit sets, so
    the L1-nearest color is found channel by channel.
    """
    p = np.asarray(pixels, dtype=np.int64)
    m = np.asarray(LOCATION_MARGINS)
    top = np.asarray(LOCATION_RADIX) - 1
    digits = np.clip(np.floor((255 - p) / m + 0.5), 0, top).astype(np.int64)
    return 255 - digits * m


def min_pairwise_l1(colors: np.ndarray) -> int:
    """Brute-force minimum L1 distance over all distinct pairs."""
    c = np.asarray(colors, dtype=np.int64)
    best = np.iinfo(np.int64).max
    for i in range(len(c) - 1):
        d = np.abs(c[i + 1:] - c[i]).sum(axis=1).min()
        best = min(best, int(d))
    return best
