"""Pixel containers, lossless image I/O and paired augmentation.

Images are plain numpy arrays of shape (H, W, 3). The storage form is
``uint8`` in [0, 255]; the model form is floating point in [0, 1].
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError


class ImageFormatError(ValueError):
    """Raised when a file is not a readable PNG or binary PPM."""


def to_unit(img: np.ndarray) -> np.ndarray:
    """u8 -> float32 in [0, 1]."""
    if img.dtype == np.uint8:
        return img.astype(np.float32) / 255.0
    return np.asarray(img, dtype=np.float32)


def to_u8(img: np.ndarray) -> np.ndarray:
    """Unit-real -> u8 with round-half-up and clamping. u8 input passes through."""
    if img.dtype == np.uint8:
        return img
    v = np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def _check_rgb(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")


# --- PPM (P6) -------------------------------------------------------------

def _read_ppm(data: bytes) -> np.ndarray:
    tokens: list[bytes] = []
    pos = 0
    # header: magic, width, height, maxval, separated by whitespace/comments
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PPM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise ImageFormatError("malformed PPM header") from exc
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit PPM is supported (maxval={maxval})")
    raster = data[pos:pos + w * h * 3]
    if len(raster) != w * h * 3:
        raise ImageFormatError("truncated PPM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def _write_ppm(img: np.ndarray, path: Path) -> None:
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img).tobytes())


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load a PNG or binary PPM as a u8 RGB array.

    Gray, palette and alpha PNGs are converted to RGB (alpha is dropped).

    Raises:
        FileNotFoundError: ``path`` does not exist.
        ImageFormatError: the file is neither a PNG nor a P6 PPM, or is corrupt.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    data = path.read_bytes()
    if data[:2] == b"P6":
        return _read_ppm(data)
    if not data.startswith(b"\x89PNG\r\n\x1a\n"):
        raise ImageFormatError(f"{path}: not a PNG or P6 PPM file")
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode != "RGB":
                im = im.convert("RGB")
            return np.asarray(im, dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: corrupt PNG ({exc})") from exc


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    """Write ``img`` as PNG (``.png`` suffix) or P6 PPM (anything else).

    Unit-real images are converted with :func:`to_u8` first. The write goes to
    a temporary file that is renamed into place.
    """
    img = to_u8(np.asarray(img))
    _check_rgb(img)
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        if path.suffix.lower() == ".png":
            PILImage.fromarray(np.ascontiguousarray(img), mode="RGB").save(tmp, format="PNG")
        else:
            _write_ppm(img, tmp)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


# --- resizing ---------------------------------------------------------------

def crop_resize(img: np.ndarray, box: tuple[int, int, int, int], size: int,
                nearest: bool) -> np.ndarray:
    """Crop ``box`` = (top, left, height, width) and resize to ``size`` x ``size``.

    Works on any (H, W) or (H, W, C) array. Sample positions use the
    half-pixel-center convention. Nearest mode only copies source values.
    """
    top, left, ch, cw = box
    src = img[top:top + ch, left:left + cw]
    ys = (np.arange(size) + 0.5) * ch / size - 0.5
    xs = (np.arange(size) + 0.5) * cw / size - 0.5
    if nearest:
        yi = np.clip(np.floor(ys + 0.5).astype(int), 0, ch - 1)
        xi = np.clip(np.floor(xs + 0.5).astype(int), 0, cw - 1)
        return src[yi][:, xi].copy()
    ys = np.clip(ys, 0, ch - 1)
    xs = np.clip(xs, 0, cw - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, ch - 1)
    x1 = np.minimum(x0 + 1, cw - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    if src.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    s = src.astype(np.float64)
    out = ((1 - wy) * ((1 - wx) * s[y0][:, x0] + wx * s[y0][:, x1])
           + wy * ((1 - wx) * s[y1][:, x0] + wx * s[y1][:, x1]))
    if img.dtype == np.uint8:
        return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return out.astype(img.dtype)


# --- augmentation -------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    scale: tuple[float, float] = (0.3, 1.0)
    ratio: tuple[float, float] = (3 / 4, 4 / 3)
    out_size: int = 64
    flip_prob: float = 0.5


def sample_crop(rng: np.random.Generator, h: int, w: int,
                scale: tuple[float, float], ratio: tuple[float, float]) -> tuple[int, int, int, int]:
    """Random-resized-crop window (top, left, height, width).

    Ten attempts at a window with area fraction in ``scale`` and aspect in
    ``ratio`` (log-uniform); falls back to the largest centered window with a
    clamped aspect.
    """
    area = h * w
    log_r = (np.log(ratio[0]), np.log(ratio[1]))
    for _ in range(10):
        target = area * rng.uniform(scale[0], scale[1])
        aspect = np.exp(rng.uniform(*log_r))
        cw = int(round(np.sqrt(target * aspect)))
        ch = int(round(np.sqrt(target / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    in_ratio = w / h
    if in_ratio < ratio[0]:
        cw, ch = w, int(round(w / ratio[0]))
    elif in_ratio > ratio[1]:
        ch, cw = h, int(round(h * ratio[1]))
    else:
        ch, cw = h, w
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def augment_pair(inp: np.ndarray, target: np.ndarray, rng: np.random.Generator,
                 cfg: AugmentConfig = AugmentConfig(), nearest_target: bool = False
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Apply one random resized crop and one flip decision to both images.

    The input is always resized bilinearly. ``nearest_target`` selects
    nearest-neighbour resizing for codec-encoded discrete targets.
    """
    if inp.shape[:2] != target.shape[:2]:
        raise ValueError(f"input {inp.shape[:2]} and target {target.shape[:2]} differ in size")
    h, w = inp.shape[:2]
    box = sample_crop(rng, h, w, cfg.scale, cfg.ratio)
    flip = rng.random() < cfg.flip_prob
    a = crop_resize(inp, box, cfg.out_size, nearest=False)
    b = crop_resize(target, box, cfg.out_size, nearest=nearest_target)
    if flip:
        a = a[:, ::-1].copy()
        b = b[:, ::-1].copy()
    return a, b
