"""File formats for native (pre-codec) ground truth.

* depth: 16-bit binary PGM (P5, maxval 65535, big-endian), value =
  round(meters * 6553.5); 0 marks a missing/invalid pixel.
* labels: 8-bit grayscale PNG of class ids, 255 = ignore.
* keypoints / instances: line-oriented text, see ``docs/formats.md``.
"""
from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .structures import IGNORE, DepthMap, Instance, Keypoint

DEPTH_SCALE = 6553.5


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_depth_pgm(d: DepthMap, path: str | os.PathLike) -> None:
    v = np.clip(np.floor(d.depth * DEPTH_SCALE + 0.5), 0, 65535).astype(">u2")
    v[~d.valid] = 0
    h, w = v.shape
    _atomic_write_bytes(Path(path), b"P5\n%d %d\n65535\n" % (w, h) + v.tobytes())


_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def load_depth_pgm(path: str | os.PathLike) -> DepthMap:
    data = Path(path).read_bytes()
    # exactly one whitespace byte ends the header; raster bytes may look like spaces
    m = _PGM_HEADER.match(data)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 65535:
        raise ValueError(f"{path}: expected a 16-bit PGM")
    raster = data[m.end():m.end() + w * h * 2]
    if len(raster) != w * h * 2:
        raise ValueError(f"{path}: truncated PGM raster")
    v = np.frombuffer(raster, dtype=">u2").reshape(h, w).astype(np.float64)
    return DepthMap(v / DEPTH_SCALE, v > 0)


def save_labels_png(labels: np.ndarray, path: str | os.PathLike) -> None:
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValueError("label PNGs hold ids in [0, 255]")
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    PILImage.fromarray(labels.astype(np.uint8), mode="L").save(tmp, format="PNG")
    os.replace(tmp, path)


def load_labels_png(path: str | os.PathLike) -> np.ndarray:
    with PILImage.open(path) as im:
        if im.mode not in ("L", "P"):
            raise ValueError(f"{path}: label PNG must be single-channel, got {im.mode}")
        return np.asarray(im, dtype=np.int64).copy()


# --- text records ----------------------------------------------------------------------

def _rle(mask: np.ndarray) -> str:
    """Run lengths over the row-major mask, starting with a (possibly empty) zero run."""
    flat = np.asarray(mask, dtype=bool).ravel()
    edges = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], edges, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs.insert(0, 0)
    return ",".join(str(r) for r in runs)


def _unrle(text: str, h: int, w: int) -> np.ndarray:
    runs = [int(r) for r in text.split(",") if r]
    flat = np.zeros(h * w, dtype=bool)
    pos, val = 0, False
    for r in runs:
        flat[pos:pos + r] = val
        pos += r
        val = not val
    if pos != h * w:
        raise ValueError(f"mask runs cover {pos} pixels, expected {h * w}")
    return flat.reshape(h, w)


def save_keypoints_txt(kps: list[Keypoint], h: int, w: int, path: str | os.PathLike) -> None:
    lines = ["# keypoints v1", f"size {h} {w}"]
    lines += [f"kp {k.cls} {float(k.x)!r} {float(k.y)!r} {float(k.score)!r}" for k in kps]
    _atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode())


def load_keypoints_txt(path: str | os.PathLike) -> tuple[list[Keypoint], tuple[int, int]]:
    kps, size = [], None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        f = line.split()
        if not f or f[0].startswith("#"):
            continue
        if f[0] == "size" and len(f) == 3:
            size = (int(f[1]), int(f[2]))
        elif f[0] == "kp" and len(f) == 5:
            kps.append(Keypoint(int(f[1]), float(f[2]), float(f[3]), float(f[4])))
        else:
            raise ValueError(f"{path}:{lineno}: bad keypoint record {line!r}")
    if size is None:
        raise ValueError(f"{path}: missing size record")
    return kps, size


def save_instances_txt(insts: list[Instance], h: int, w: int, path: str | os.PathLike) -> None:
    lines = ["# instances v1", f"size {h} {w}"]
    for i in insts:
        cls = "-" if i.cls is None else str(i.cls)
        r, c = i.center
        lines.append(f"inst {cls} {float(i.score)!r} {float(r)!r} {float(c)!r} {_rle(i.mask)}")
    _atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode())


def load_instances_txt(path: str | os.PathLike) -> tuple[list[Instance], tuple[int, int]]:
    insts, size = [], None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        f = line.split()
        if not f or f[0].startswith("#"):
            continue
        if f[0] == "size" and len(f) == 3:
            size = (int(f[1]), int(f[2]))
        elif f[0] == "inst" and len(f) == 6 and size is not None:
            mask = _unrle(f[5], *size)
            cls = None if f[1] == "-" else int(f[1])
            insts.append(Instance(mask, (float(f[3]), float(f[4])), cls, float(f[2])))
        else:
            raise ValueError(f"{path}:{lineno}: bad instance record {line!r}")
    if size is None:
        raise ValueError(f"{path}: missing size record")
    return insts, size


__all__ = ["save_depth_pgm", "load_depth_pgm", "save_labels_png", "load_labels_png",
           "save_keypoints_txt", "load_keypoints_txt", "save_instances_txt",
           "load_instances_txt", "IGNORE"]
