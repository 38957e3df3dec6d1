"""Masked pixel regression, AdamW with a warmup-cosine schedule, and the loop."""
from __future__ import annotations

import csv
import logging
import math
import os
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .canvas import bottom_half_plan, sample_block_mask, stitch_training_sample
from .data import TASK_NEAREST, TaskSample
from .image import AugmentConfig, augment_pair, to_unit
from .model import ModelConfig, Params, forward, init_params, no_decay, save_checkpoint

log = logging.getLogger(__name__)

# Per-task sampling weights used for the full eight-dataset mix.
PUBLISHED_TASK_WEIGHTS = {
    "depth": 0.1,
    "semseg": 0.2,
    "instance": 0.15,
    "semseg_coco": 0.25,
    "keypoint": 0.2,
    "denoise": 0.15,
    "derain": 0.05,
    "lowlight": 0.05,
}


@dataclass
class TrainConfig:
    base_lr: float = 1e-3
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_fraction: float = 0.1
    total_iters: int = 2000
    batch_size: int = 8
    smooth_l1_beta: float = 0.01
    loss: str = "smooth_l1"  # "smooth_l1" | "l1" | "l2"
    mask_ratio: float = 0.75
    mask_min_block: int = 4  # smallest block, in patches
    mask_aspect: tuple[float, float] = (0.3, 1 / 0.3)
    mask_prompt_half: bool = True  # False: mask only the second pair's output
    # chance that a canvas instead hides exactly the second output, as at inference
    query_mask_prob: float = 0.0
    task_weights: dict[str, float] = field(default_factory=lambda: {"semseg": 0.2, "depth": 0.1})
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    checkpoint_every: int = 0
    log_every: int = 50
    seed: int = 0
    # "bf16" runs the forward pass under CPU autocast; weights, optimizer
    # state and the loss stay float32
    precision: str = "fp32"

    def __post_init__(self):
        if isinstance(self.augment, Mapping):
            aug = dict(self.augment)
            for k in ("scale", "ratio"):
                if k in aug:
                    aug[k] = tuple(aug[k])
            self.augment = AugmentConfig(**aug)
        self.mask_aspect = tuple(self.mask_aspect)
        if not 0 <= self.query_mask_prob <= 1:
            raise ValueError("query_mask_prob must lie in [0, 1]")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.precision not in ("fp32", "bf16"):
            raise ValueError(f"precision must be 'fp32' or 'bf16', got {self.precision!r}")
        _check_weights(self.task_weights)


@dataclass
class OptimizerState:
    exp_avg: dict[str, torch.Tensor]
    exp_avg_sq: dict[str, torch.Tensor]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Params) -> OptimizerState:
        return cls({k: torch.zeros_like(v) for k, v in params.items()},
                   {k: torch.zeros_like(v) for k, v in params.items()})


# --- loss -------------------------------------------------------------------------

def _pixel_mask(mask, pred: torch.Tensor, patch_size: int | None) -> torch.Tensor:
    """Broadcastable (B or 1, 1, H, W) float mask from a pixel or patch mask."""
    if hasattr(mask, "to_pixels"):
        mask = mask.to_pixels(patch_size)
    m = torch.as_tensor(np.asarray(mask) if not isinstance(mask, torch.Tensor) else mask)
    m = m.to(pred.dtype)
    H, W = pred.shape[-2:]
    if m.shape[-2:] != (H, W):
        if patch_size is None:
            raise ValueError("patch-level mask needs patch_size")
        m = m.reshape(-1, H // patch_size, W // patch_size)
        m = m.repeat_interleave(patch_size, 1).repeat_interleave(patch_size, 2)
    return m.reshape(-1, 1, H, W)


def smooth_l1_masked(pred: torch.Tensor, target: torch.Tensor, mask, beta: float = 0.01,
                     patch_size: int | None = None, kind: str = "smooth_l1") -> torch.Tensor:
    """Mean regression loss over masked pixels x 3 channels.

    ``mask`` may be an (H, W) / (B, H, W) pixel mask, a (B, T) patch mask
    (with ``patch_size``), or a MaskPlan.
    """
    if pred.shape != target.shape:
        raise ValueError(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    m = _pixel_mask(mask, pred, patch_size).expand(pred.shape[0], 1, *pred.shape[-2:])
    count = m.sum() * pred.shape[1]
    if count == 0:
        raise ValueError("loss over an empty mask")
    diff = pred - target
    if kind == "smooth_l1":
        ad = diff.abs()
        per = torch.where(ad < beta, 0.5 * diff ** 2 / beta, ad - 0.5 * beta)
    elif kind == "l1":
        per = diff.abs()
    elif kind == "l2":
        per = diff ** 2
    else:
        raise ValueError(f"unknown loss {kind!r}")
    return (per * m).sum() / count


# --- gradients and optimizer --------------------------------------------------------

def compute_gradients(loss: torch.Tensor, params: Params) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of a scalar loss w.r.t. every parameter tensor."""
    if not loss.requires_grad:
        raise RuntimeError("loss was computed without recording; enable requires_grad on params")
    names = list(params)
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    return {n: (torch.zeros_like(params[n]) if g is None else g) for n, g in zip(names, grads)}


def adamw_step(params: Params, grads: Mapping[str, torch.Tensor], state: OptimizerState,
               lr: float, cfg: TrainConfig) -> tuple[Params, OptimizerState]:
    """Decoupled-weight-decay Adam with bias correction, applied in place."""
    for n, g in grads.items():
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {n}")
    state.step += 1
    t = state.step
    bc1 = 1 - cfg.beta1 ** t
    bc2 = 1 - cfg.beta2 ** t
    with torch.no_grad():
        for n, p in params.items():
            g = grads[n]
            m = state.exp_avg[n].mul_(cfg.beta1).add_(g, alpha=1 - cfg.beta1)
            v = state.exp_avg_sq[n].mul_(cfg.beta2).addcmul_(g, g, value=1 - cfg.beta2)
            if cfg.weight_decay and not no_decay(n):
                p.mul_(1 - lr * cfg.weight_decay)
            denom = (v / bc2).sqrt_().add_(cfg.eps)
            p.addcdiv_(m, denom, value=-lr / bc1)
    return params, state


def cosine_lr(step: float, total: int, base_lr: float, warmup_fraction: float = 0.1) -> float:
    """Linear warmup to ``base_lr`` then half-cosine decay to 0 at ``total``."""
    warm = warmup_fraction * total
    if warm > 0 and step < warm:
        return base_lr * step / warm
    if total <= warm:
        return base_lr
    progress = min(max((step - warm) / (total - warm), 0.0), 1.0)
    return base_lr * 0.5 * (1 + math.cos(math.pi * progress))


def _check_weights(weights: Mapping[str, float]) -> None:
    if not weights:
        raise ValueError("no task weights given")
    w = np.array(list(weights.values()), dtype=float)
    if (w < 0).any() or not np.isfinite(w).all() or w.sum() <= 0:
        raise ValueError(f"task weights must be nonnegative with a positive sum: {dict(weights)}")


def sample_task(rng: np.random.Generator, weights: Mapping[str, float]) -> str:
    """Categorical draw proportional to ``weights`` (insertion order fixes the outcome map)."""
    _check_weights(weights)
    names = list(weights)
    p = np.array([weights[n] for n in names], dtype=float)
    return names[int(rng.choice(len(names), p=p / p.sum()))]


# --- training loop --------------------------------------------------------------------

def assemble_batch(datasets: Mapping[str, Sequence[TaskSample]], cfg: TrainConfig,
                   model_cfg: ModelConfig, rng: np.random.Generator):
    """Draw, augment, stitch and mask one batch.

    Returns (input canvases, output canvases, patch masks, task names) with
    canvases as (B, 3, Hc, Wc) float tensors and masks as (B, T) booleans.
    """
    weights = {k: v for k, v in cfg.task_weights.items() if k in datasets and datasets[k]}
    aug = AugmentConfig(cfg.augment.scale, cfg.augment.ratio, model_cfg.img_size[0],
                        cfg.augment.flip_prob)
    ins, outs, masks, tasks = [], [], [], []
    rows, cols = model_cfg.grid
    for _ in range(cfg.batch_size):
        task = sample_task(rng, weights)
        pool = datasets[task]
        idx = rng.choice(len(pool), size=2, replace=len(pool) < 2)
        pairs = []
        for j in idx:
            s = pool[int(j)]
            pairs.append(augment_pair(s.image, s.target, rng, aug,
                                      nearest_target=TASK_NEAREST.get(task, False)))
        canvas = stitch_training_sample(pairs[0], pairs[1], model_cfg.orientation)
        if cfg.query_mask_prob > 0 and rng.random() < cfg.query_mask_prob:
            m = bottom_half_plan((rows, cols), model_cfg.orientation).to_grid()
        elif cfg.mask_prompt_half:
            m = sample_block_mask((rows, cols), cfg.mask_ratio, rng, cfg.mask_min_block,
                                  cfg.mask_aspect).to_grid()
        else:
            half = (rows // 2, cols) if model_cfg.orientation == "vertical" else (rows, cols // 2)
            sub = sample_block_mask(half, cfg.mask_ratio, rng, cfg.mask_min_block,
                                    cfg.mask_aspect).to_grid()
            m = np.zeros((rows, cols), dtype=bool)
            if model_cfg.orientation == "vertical":
                m[rows // 2:] = sub
            else:
                m[:, cols // 2:] = sub
        ins.append(to_unit(canvas.input_canvas))
        outs.append(to_unit(canvas.output_canvas))
        masks.append(m.ravel())
        tasks.append(task)
    x_in = torch.from_numpy(np.stack(ins).transpose(0, 3, 1, 2).copy())
    x_out = torch.from_numpy(np.stack(outs).transpose(0, 3, 1, 2).copy())
    return x_in, x_out, torch.from_numpy(np.stack(masks)), tasks


def train(cfg: TrainConfig, model_cfg: ModelConfig,
          datasets: Mapping[str, Sequence[TaskSample]],
          out_dir: str | os.PathLike | None = None,
          params: Params | None = None,
          callback: Callable[[int, float], None] | None = None) -> tuple[Params, list[dict]]:
    """Run masked-image-modeling training on stitched same-task pairs.

    Writes ``checkpoint.bin`` and ``loss.csv`` to ``out_dir`` when given.
    Returns the trained parameters and the loss log rows.
    """
    active = {k: v for k, v in cfg.task_weights.items() if v > 0 and k in datasets and datasets[k]}
    if not active:
        raise ValueError("no non-empty dataset matches a task with positive weight")
    rng = np.random.default_rng(cfg.seed)
    params = params if params is not None else init_params(model_cfg, cfg.seed)
    for p in params.values():
        p.requires_grad_(True)
    state = OptimizerState.zeros_like(params)
    drop_gen = torch.Generator().manual_seed(cfg.seed + 1)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for it in range(cfg.total_iters):
        x_in, x_out, m, tasks = assemble_batch(datasets, cfg, model_cfg, rng)
        with torch.autocast("cpu", dtype=torch.bfloat16, enabled=cfg.precision == "bf16"):
            pred = forward(params, model_cfg, x_in, x_out, m, gen=drop_gen)
        loss = smooth_l1_masked(pred.float(), x_out, m, cfg.smooth_l1_beta, model_cfg.patch_size, cfg.loss)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite loss at iteration {it} (tasks {sorted(set(tasks))})")
        grads = compute_gradients(loss, params)
        lr = cosine_lr(it, cfg.total_iters, cfg.base_lr, cfg.warmup_fraction)
        adamw_step(params, grads, state, lr, cfg)
        rows.append({"iteration": it, "task": "+".join(sorted(set(tasks))),
                     "loss": value, "lr": lr})
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("iter %d loss %.5f lr %.2e", it, value, lr)
        if callback is not None:
            callback(it, value)
        if out is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(params, model_cfg, out / "checkpoint.bin")
            write_loss_log(rows, out / "loss.csv")
    for p in params.values():
        p.requires_grad_(False)
    if out is not None:
        save_checkpoint(params, model_cfg, out / "checkpoint.bin")
        write_loss_log(rows, out / "loss.csv")
    return params, rows


def write_loss_log(rows: Sequence[dict], path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["iteration", "task", "loss", "lr"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "loss": repr(r["loss"]), "lr": repr(r["lr"])})
    os.replace(tmp, path)
