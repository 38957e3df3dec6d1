"""In-context inference: a prompt pair plus a query, with the query output masked."""
from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import torch

from .canvas import build_inference_canvas, split_canvas
from .image import to_u8, to_unit
from .model import ModelConfig, Params, forward


def infer_batch(params: Params, cfg: ModelConfig, prompt: tuple[np.ndarray, np.ndarray],
                queries: Sequence[np.ndarray], batch_size: int = 16
                ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Run every query against one prompt.

    Returns (query predictions, full predicted canvases), both as u8 images.
    """
    preds, canvases = [], []
    for start in range(0, len(queries), batch_size):
        chunk = queries[start:start + batch_size]
        ins, outs = [], []
        plan = None
        for q in chunk:
            canvas, plan = build_inference_canvas(prompt, q, cfg.patch_size, cfg.orientation)
            ins.append(to_unit(canvas.input_canvas))
            outs.append(to_unit(canvas.output_canvas))
        x_in = torch.from_numpy(np.stack(ins).transpose(0, 3, 1, 2).copy())
        x_out = torch.from_numpy(np.stack(outs).transpose(0, 3, 1, 2).copy())
        with torch.no_grad():
            y = forward(params, cfg, x_in, x_out, plan.to_grid().ravel())
        y = y.clamp(0, 1).permute(0, 2, 3, 1).numpy()
        for c in y:
            c8 = to_u8(c)
            canvases.append(c8)
            preds.append(split_canvas(c8, cfg.orientation)[1].copy())
    return preds, canvases


def infer(params: Params, cfg: ModelConfig, prompt: tuple[np.ndarray, np.ndarray],
          query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single query: (predicted output image, predicted canvas), both u8."""
    preds, canvases = infer_batch(params, cfg, prompt, [query])
    return preds[0], canvases[0]
