"""TOML run configuration.

Every table is optional and maps onto one dataclass: ``[model]``,
``[train]`` (with ``[train.augment]`` and ``[train.task_weights]``),
``[synth]``, ``[instance]``, ``[keypoint]``, ``[panoptic]``, ``[prompt]``
and ``[infer]``. ``configs/default.toml`` lists every key with its default.
Unknown keys are rejected so that typos fail loudly.
"""
from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .codecs import InstanceDecodeConfig, KeypointCodecConfig, PanopticMergeConfig
from .model import ModelConfig
from .synth import SceneSpec
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class InferConfig:
    batch_size: int = 16


@dataclass
class PromptConfig:
    candidates: int = 8  # prompt-search pool size
    queries: int = 16  # evaluation / optimization queries
    exhaustive: bool = False  # search every sample outside the query set
    steps: int = 50  # prompt-learn optimizer steps
    lr: float = 1e-2


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SceneSpec = field(default_factory=SceneSpec)
    instance: InstanceDecodeConfig = field(default_factory=InstanceDecodeConfig)
    keypoint: KeypointCodecConfig = field(default_factory=KeypointCodecConfig)
    panoptic: PanopticMergeConfig = field(default_factory=PanopticMergeConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    infer: InferConfig = field(default_factory=InferConfig)


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "synth": SceneSpec,
             "instance": InstanceDecodeConfig, "keypoint": KeypointCodecConfig,
             "panoptic": PanopticMergeConfig, "prompt": PromptConfig, "infer": InferConfig}


def _build(cls, table: dict[str, Any], where: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - set(names))
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {', '.join(unknown)}")
    kwargs = {}
    for k, v in table.items():
        # TOML arrays arrive as lists; the dataclasses use tuples.
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{where}] {e}") from e


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(unknown)}")
    return RunConfig(**{name: _build(cls, data.get(name, {}), name)
                        for name, cls in _SECTIONS.items()})


def load_config(path: str | os.PathLike | None) -> RunConfig:
    """Read a TOML config; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    """Plain nested dict of every setting (tuples become lists)."""
    def plain(v):
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (tuple, list)):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v
    return {name: plain(getattr(cfg, name)) for name in _SECTIONS}
