"""Two-branch ViT encoder with early merging, mask token and a light pixel head.

The model is written functionally: parameters live in an ordered
``dict[str, torch.Tensor]`` so the same forward pass serves training,
frozen-model prompt tuning and finite-difference checks.
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

Params = dict[str, torch.Tensor]

# Pixels enter the patch embedding centered and scaled; the head predicts in
# the same normalized space and is mapped back to [0, 1].
PIXEL_CENTER = 0.5
PIXEL_SCALE = 0.25


@dataclass
class ModelConfig:
    patch_size: int = 8
    embed_dim: int = 128
    depth: int = 6
    num_heads: int = 4
    merge_after: int = 2
    mlp_ratio: int = 4
    drop_path_rate: float = 0.1
    img_size: tuple[int, int] = (64, 64)
    orientation: str = "vertical"
    head: str = "light"  # "light" or "linear"
    separate_pos_embed: bool = False
    feature_taps: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.img_size = tuple(self.img_size)
        if not self.feature_taps:
            self.feature_taps = default_taps(self.depth, self.merge_after)
        self.feature_taps = tuple(int(t) for t in self.feature_taps)
        self.validate()

    def validate(self) -> None:
        h, w = self.img_size
        P = self.patch_size
        if P < 1 or h % P or w % P:
            raise ValueError(f"patch size {P} must divide the image size {self.img_size}")
        if not 0 <= self.merge_after < self.depth:
            raise ValueError(f"merge_after={self.merge_after} must be in [0, depth={self.depth})")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")
        taps = self.feature_taps
        if len(taps) != 4 or any(b < a for a, b in zip(taps, taps[1:])):
            raise ValueError(f"feature taps {taps} must be 4 non-decreasing block indices")
        if taps[0] < self.merge_after or taps[-1] > self.depth:
            raise ValueError(f"feature taps {taps} must lie in [{self.merge_after}, {self.depth}]")
        if self.orientation not in ("vertical", "horizontal"):
            raise ValueError(f"unknown orientation {self.orientation!r}")
        if self.head not in ("light", "linear"):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def canvas_size(self) -> tuple[int, int]:
        h, w = self.img_size
        return (2 * h, w) if self.orientation == "vertical" else (h, 2 * w)

    @property
    def grid(self) -> tuple[int, int]:
        ch, cw = self.canvas_size
        return ch // self.patch_size, cw // self.patch_size

    @property
    def num_patches(self) -> int:
        r, c = self.grid
        return r * c

    def to_dict(self) -> dict:
        d = asdict(self)
        d["img_size"] = list(self.img_size)
        d["feature_taps"] = list(self.feature_taps)
        return d


def default_taps(depth: int, merge_after: int) -> tuple[int, ...]:
    """Blocks ceil(i*N/4), i = 1..4, lifted to at least the merge block.

    Tap t means "output of block t" (1-based); t == merge_after taps the
    freshly merged stream.
    """
    return tuple(max(merge_after, math.ceil(i * depth / 4)) for i in range(1, 5))


# --- parameters -----------------------------------------------------------------

def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    D, P, T = cfg.embed_dim, cfg.patch_size, cfg.num_patches
    hidden = cfg.mlp_ratio * D
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (D, P * P * 3),
        "patch_embed.bias": (D,),
        "pos_embed": (T, D),
    }
    if cfg.separate_pos_embed:
        shapes["pos_embed_out"] = (T, D)
    shapes["mask_token"] = (D,)
    for i in range(cfg.depth):
        b = f"blocks.{i}."
        shapes.update({
            b + "norm1.weight": (D,), b + "norm1.bias": (D,),
            b + "attn.qkv.weight": (3 * D, D), b + "attn.qkv.bias": (3 * D,),
            b + "attn.proj.weight": (D, D), b + "attn.proj.bias": (D,),
            b + "norm2.weight": (D,), b + "norm2.bias": (D,),
            b + "mlp.fc1.weight": (hidden, D), b + "mlp.fc1.bias": (hidden,),
            b + "mlp.fc2.weight": (D, hidden), b + "mlp.fc2.bias": (D,),
        })
    shapes["head.norm.weight"] = (4 * D,)
    shapes["head.norm.bias"] = (4 * D,)
    if cfg.head == "light":
        shapes.update({
            "head.fc1.weight": (D, 4 * D), "head.fc1.bias": (D,),
            "head.conv.weight": (D, D, 3, 3), "head.conv.bias": (D,),
            "head.fc2.weight": (P * P * 3, D), "head.fc2.bias": (P * P * 3,),
        })
    else:
        shapes.update({"head.fc2.weight": (P * P * 3, 4 * D), "head.fc2.bias": (P * P * 3,)})
    return shapes


def count_params(cfg: ModelConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(cfg).values())


def init_params(cfg: ModelConfig, seed: int = 0) -> Params:
    """Truncated-normal(0.02, cut at 2 std) weights, zero biases, unit norm gains."""
    gen = torch.Generator().manual_seed(seed)
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".bias"):
            t = torch.zeros(shape)
        elif ".norm" in name or name.startswith("head.norm"):
            t = torch.ones(shape)
        else:
            t = torch.empty(shape)
            torch.nn.init.trunc_normal_(t, std=0.02, a=-0.04, b=0.04, generator=gen)
        params[name] = t
    return params


def no_decay(name: str) -> bool:
    """Parameters exempt from weight decay."""
    return (name.endswith(".bias") or "norm" in name or name.startswith("pos_embed")
            or name == "mask_token")


# --- forward pass -----------------------------------------------------------------

def patchify(x: torch.Tensor, P: int) -> torch.Tensor:
    """(B, 3, H, W) -> (B, T, P*P*3), row-major patches, (py, px, c) inside."""
    B, C, H, W = x.shape
    x = x.reshape(B, C, H // P, P, W // P, P)
    return x.permute(0, 2, 4, 3, 5, 1).reshape(B, (H // P) * (W // P), P * P * C)


def unpatchify(x: torch.Tensor, P: int, grid: tuple[int, int]) -> torch.Tensor:
    B = x.shape[0]
    gh, gw = grid
    x = x.reshape(B, gh, gw, P, P, 3)
    return x.permute(0, 5, 1, 3, 2, 4).reshape(B, 3, gh * P, gw * P)


def _drop_path(x: torch.Tensor, rate: float, gen: torch.Generator | None) -> torch.Tensor:
    if rate <= 0 or gen is None:
        return x
    keep = 1.0 - rate
    mask = (torch.rand((x.shape[0], 1, 1), generator=gen, dtype=x.dtype) < keep).to(x.dtype)
    return x * mask / keep


def block(params: Params, i: int, x: torch.Tensor, num_heads: int,
          drop_rate: float = 0.0, gen: torch.Generator | None = None) -> torch.Tensor:
    """Pre-norm transformer block."""
    p = f"blocks.{i}."
    B, T, D = x.shape
    dh = D // num_heads
    h = F.layer_norm(x, (D,), params[p + "norm1.weight"], params[p + "norm1.bias"])
    qkv = F.linear(h, params[p + "attn.qkv.weight"], params[p + "attn.qkv.bias"])
    q, k, v = qkv.reshape(B, T, 3, num_heads, dh).permute(2, 0, 3, 1, 4)
    attn = torch.softmax((q @ k.transpose(-2, -1)) / math.sqrt(dh), dim=-1)
    h = (attn @ v).transpose(1, 2).reshape(B, T, D)
    h = F.linear(h, params[p + "attn.proj.weight"], params[p + "attn.proj.bias"])
    x = x + _drop_path(h, drop_rate, gen)
    h = F.layer_norm(x, (D,), params[p + "norm2.weight"], params[p + "norm2.bias"])
    h = F.gelu(F.linear(h, params[p + "mlp.fc1.weight"], params[p + "mlp.fc1.bias"]))
    h = F.linear(h, params[p + "mlp.fc2.weight"], params[p + "mlp.fc2.bias"])
    return x + _drop_path(h, drop_rate, gen)


def _as_batch(x, dtype) -> torch.Tensor:
    """Accept (H, W, 3) / (B, H, W, 3) numpy arrays or (B, 3, H, W) tensors."""
    if isinstance(x, torch.Tensor):
        return x if x.ndim == 4 else x.unsqueeze(0)
    a = np.asarray(x)
    if a.dtype == np.uint8:
        a = a.astype(np.float32) / 255.0
    if a.ndim == 3:
        a = a[None]
    return torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2))).to(dtype)


def _as_mask(mask, batch: int, T: int) -> torch.Tensor:
    if not isinstance(mask, torch.Tensor):
        mask = torch.from_numpy(np.asarray(mask))
    if mask.numel() not in (T, batch * T):
        raise ValueError(f"mask with {mask.numel()} entries does not fit {batch} x {T} patches")
    m = mask.to(torch.bool).reshape(-1, T)
    return m.expand(batch, T) if m.shape[0] == 1 else m


def forward(params: Params, cfg: ModelConfig, input_canvas, output_canvas, mask,
            gen: torch.Generator | None = None, return_taps: bool = False):
    """Predict the full output canvas.

    Args:
        input_canvas, output_canvas: (B, 3, Hc, Wc) tensors in [0, 1], or
            numpy images (u8 or unit-real, with or without a batch axis).
        mask: (T,) or (B, T) boolean patch mask, True = masked output patch.
            A :class:`~painter.canvas.MaskPlan` is accepted too.
        gen: generator for stochastic depth; ``None`` disables drop-path.

    Returns:
        (B, 3, Hc, Wc) predicted output canvas (unclamped).
    """
    dtype = params["pos_embed"].dtype
    x_in = _as_batch(input_canvas, dtype)
    x_out = _as_batch(output_canvas, dtype)
    if x_in.shape != x_out.shape:
        raise ValueError(f"canvas shapes differ: {tuple(x_in.shape)} vs {tuple(x_out.shape)}")
    if tuple(x_in.shape[2:]) != cfg.canvas_size:
        raise ValueError(f"canvas {tuple(x_in.shape[2:])} != configured {cfg.canvas_size}")
    if hasattr(mask, "to_grid"):
        mask = mask.to_grid().ravel()
    B = x_in.shape[0]
    P, T, D = cfg.patch_size, cfg.num_patches, cfg.embed_dim
    m = _as_mask(mask, B, T)

    w_e, b_e = params["patch_embed.weight"], params["patch_embed.bias"]
    a = F.linear(patchify((x_in - PIXEL_CENTER) / PIXEL_SCALE, P), w_e, b_e)
    o = F.linear(patchify((x_out - PIXEL_CENTER) / PIXEL_SCALE, P), w_e, b_e)
    o = torch.where(m[..., None], params["mask_token"].expand(B, T, D), o)
    a = a + params["pos_embed"]
    o = o + params.get("pos_embed_out", params["pos_embed"])

    rates = [cfg.drop_path_rate * i / max(cfg.depth - 1, 1) for i in range(cfg.depth)]
    for i in range(cfg.merge_after):
        a = block(params, i, a, cfg.num_heads, rates[i], gen)
        o = block(params, i, o, cfg.num_heads, rates[i], gen)
    x = a + o
    # shallow models may tap one block more than once, e.g. (1, 1, 2, 2)
    taps = [x] * cfg.feature_taps.count(cfg.merge_after)
    for i in range(cfg.merge_after, cfg.depth):
        x = block(params, i, x, cfg.num_heads, rates[i], gen)
        taps += [x] * cfg.feature_taps.count(i + 1)
    feats = torch.cat(taps, dim=-1)
    feats = F.layer_norm(feats, (4 * D,), params["head.norm.weight"], params["head.norm.bias"])
    gh, gw = cfg.grid
    if cfg.head == "light":
        h = F.linear(feats, params["head.fc1.weight"], params["head.fc1.bias"])
        h = h.transpose(1, 2).reshape(B, D, gh, gw)
        h = F.conv2d(h, params["head.conv.weight"], params["head.conv.bias"], padding=1)
        h = F.gelu(h).reshape(B, D, T).transpose(1, 2)
    else:
        h = feats
    pix = F.linear(h, params["head.fc2.weight"], params["head.fc2.bias"])
    pred = unpatchify(pix, P, (gh, gw)) * PIXEL_SCALE + PIXEL_CENTER
    if not torch.isfinite(pred).all():
        raise FloatingPointError("non-finite activations in forward pass")
    if return_taps:
        return pred, taps
    return pred


# --- checkpoints --------------------------------------------------------------------

MAGIC = b"PNTRCKPT"
VERSION = 1


def save_checkpoint(params: Params, cfg: ModelConfig, path: str | os.PathLike) -> None:
    """Little-endian binary: magic, version, JSON config, then named f32 tensors.

    Layout::

        8s  magic "PNTRCKPT"
        u32 version
        u32 config length, utf-8 JSON config
        u32 tensor count
        per tensor: u32 name length, name, u32 ndim, ndim x u32 dims, f32 data
    """
    path = Path(path)
    cfg_bytes = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(cfg_bytes)))
        f.write(cfg_bytes)
        f.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            nb = name.encode()
            arr = t.detach().cpu().numpy().astype("<f4", copy=False)
            f.write(struct.pack("<I", len(nb)) + nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[Params, ModelConfig]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, n = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    cfg = ModelConfig(**json.loads(data[pos:pos + n]))
    pos += n
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params: Params = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", data, pos)
        name = data[pos + 4:pos + 4 + ln].decode()
        pos += 4 + ln
        (ndim,) = struct.unpack_from("<I", data, pos)
        dims = struct.unpack_from(f"<{ndim}I", data, pos + 4)
        pos += 4 + 4 * ndim
        size = 4 * math.prod(dims)
        arr = np.frombuffer(data, dtype="<f4", count=math.prod(dims), offset=pos).reshape(dims)
        params[name] = torch.from_numpy(arr.astype(np.float32))
        pos += size
    expected = param_shapes(cfg)
    if set(expected) != set(params) or any(tuple(params[k].shape) != s for k, s in expected.items()):
        raise ValueError(f"{path}: tensors do not match the stored config")
    return params, cfg
