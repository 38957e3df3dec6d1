"""Task samples, the task registry and the on-disk dataset manifest.

A dataset directory looks like::

    root/
      manifest.jsonl      one JSON record per line
      input/<name>.png    task input image
      target/<name>.png   encoded task output image
      native/<name>.*     native ground truth (optional)

Each manifest record has ``task``, ``input``, ``target`` (paths relative to
the manifest) and a free-form ``meta`` object.
"""
from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image import load_image

TASKS = ("depth", "semseg", "instance", "keypoint", "denoise", "derain", "lowlight")

# Discrete codes must not be blended when resized.
TASK_NEAREST = {
    "depth": False,
    "semseg": True,
    "instance": True,
    "keypoint": True,
    "denoise": False,
    "derain": False,
    "lowlight": False,
}


@dataclass
class TaskSample:
    task: str
    image: np.ndarray
    target: np.ndarray
    meta: dict = field(default_factory=dict)


def write_manifest(records: list[dict], path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_manifest(path: str | os.PathLike) -> list[dict]:
    path = Path(path)
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def load_dataset(manifest: str | os.PathLike, tasks: set[str] | None = None
                 ) -> dict[str, list[TaskSample]]:
    """Group manifest samples by task, loading input and target images."""
    manifest = Path(manifest)
    root = manifest.parent
    out: dict[str, list[TaskSample]] = defaultdict(list)
    for rec in read_manifest(manifest):
        if tasks is not None and rec["task"] not in tasks:
            continue
        out[rec["task"]].append(TaskSample(rec["task"], load_image(root / rec["input"]),
                                           load_image(root / rec["target"]),
                                           rec.get("meta", {})))
    return dict(out)
