"""Task prompts chosen by search or optimized in pixel space over a frozen model."""
from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
import torch

from .canvas import bottom_half_plan
from .image import to_unit
from .inference import infer_batch
from .model import ModelConfig, Params, forward
from .train import OptimizerState, TrainConfig, adamw_step, smooth_l1_masked

Pair = tuple[np.ndarray, np.ndarray]


def search_prompts(params: Params, cfg: ModelConfig, candidates: Sequence[Pair],
                   queries: Sequence[np.ndarray], references: Sequence,
                   metric: Callable[[np.ndarray, object], float]
                   ) -> tuple[int, Pair, list[float]]:
    """Score every candidate prompt on an evaluation set.

    ``metric(pred_u8, reference)`` is averaged over the queries; higher is
    better. Returns (best index, best pair, per-candidate scores); ties go
    to the earliest candidate.
    """
    if not candidates:
        raise ValueError("no candidate prompts")
    if len(queries) != len(references):
        raise ValueError("queries and references must align")
    scores = []
    for pair in candidates:
        preds, _ = infer_batch(params, cfg, pair, queries)
        scores.append(float(np.mean([metric(p, r) for p, r in zip(preds, references)])))
    best = int(np.argmax(scores))
    return best, candidates[best], scores


@dataclass
class LearnedPrompt:
    pair: tuple[np.ndarray, np.ndarray]  # unit-real (H, W, 3) each
    loss: float
    init_loss: float
    history: list[float]


def _stack_queries(cfg: ModelConfig, prompt_in: torch.Tensor, prompt_out: torch.Tensor,
                   q_in: torch.Tensor, q_out: torch.Tensor):
    B = q_in.shape[0]
    dim = 2 if cfg.orientation == "vertical" else 3
    x_in = torch.cat([prompt_in.expand(B, -1, -1, -1), q_in], dim=dim)
    x_out = torch.cat([prompt_out.expand(B, -1, -1, -1), q_out], dim=dim)
    return x_in, x_out


def prompt_loss(params: Params, cfg: ModelConfig, prompt_in: torch.Tensor,
                prompt_out: torch.Tensor, q_in: torch.Tensor, q_target: torch.Tensor,
                beta: float = 0.01) -> torch.Tensor:
    """Masked smooth-l1 on the query halves with the given prompt."""
    x_in, x_target = _stack_queries(cfg, prompt_in, prompt_out, q_in, q_target)
    mask = bottom_half_plan(cfg.grid, cfg.orientation).to_grid().ravel()
    pred = forward(params, cfg, x_in, x_target, mask)
    return smooth_l1_masked(pred, x_target, mask, beta, cfg.patch_size)


def _chw(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(to_unit(img).transpose(2, 0, 1)))[None]


def learn_prompts(params: Params, cfg: ModelConfig, init: Pair,
                  queries: Sequence[tuple[np.ndarray, np.ndarray]], steps: int,
                  lr: float = 1e-2, beta: float = 0.01) -> LearnedPrompt:
    """Optimize the prompt pixels with Adam while the model stays frozen.

    ``queries`` are (input, encoded target) pairs. Pixels are clamped to
    [0, 1] after each step. The returned pair is the lowest-loss one seen,
    the initialization included, so the loss never ends above its start.
    """
    p_in = _chw(init[0]).clone().requires_grad_(True)
    p_out = _chw(init[1]).clone().requires_grad_(True)
    q_in = torch.cat([_chw(q) for q, _ in queries])
    q_t = torch.cat([_chw(t) for _, t in queries])
    frozen = {k: v.detach() for k, v in params.items()}
    opt_cfg = TrainConfig(weight_decay=0.0)
    prompt = {"prompt_in": p_in, "prompt_out": p_out}
    state = OptimizerState.zeros_like(prompt)

    def snapshot():
        return tuple(t.detach()[0].permute(1, 2, 0).numpy().copy() for t in (p_in, p_out))

    history = []
    best_pair, best_loss = snapshot(), None
    for step in range(steps + 1):
        loss = prompt_loss(frozen, cfg, p_in, p_out, q_in, q_t, beta)
        value = float(loss.detach())
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite prompt loss at step {step}")
        history.append(value)
        if best_loss is None or value < best_loss:
            best_loss, best_pair = value, snapshot()
        if step == steps:
            break
        g_in, g_out = torch.autograd.grad(loss, [p_in, p_out])
        adamw_step(prompt, {"prompt_in": g_in, "prompt_out": g_out}, state, lr, opt_cfg)
        with torch.no_grad():
            p_in.clamp_(0, 1)
            p_out.clamp_(0, 1)
    return LearnedPrompt(best_pair, best_loss, history[0], history)
