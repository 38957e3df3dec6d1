import csv
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from painter.data import TaskSample
from painter.model import ModelConfig, init_params, load_checkpoint
from painter.train import (PUBLISHED_TASK_WEIGHTS, OptimizerState, TrainConfig, adamw_step,
                           assemble_batch, compute_gradients, cosine_lr, sample_task,
                           smooth_l1_masked, train)


def test_published_weights_are_relative():
    # the published mix sums to 1.15; sampling renormalizes it
    assert math.isclose(sum(PUBLISHED_TASK_WEIGHTS.values()), 1.15)
    rng = np.random.default_rng(0)
    draws = [sample_task(rng, PUBLISHED_TASK_WEIGHTS) for _ in range(4000)]
    assert draws.count("semseg_coco") / 4000 == pytest.approx(0.25 / 1.15, abs=0.02)


def test_smooth_l1_matches_torch_on_masked_pixels():
    g = torch.Generator().manual_seed(0)
    pred = torch.randn(2, 3, 8, 8, generator=g) * 0.05
    target = torch.randn(2, 3, 8, 8, generator=g) * 0.05
    mask = torch.zeros(2, 4, dtype=torch.bool)  # 2x2 grid of 4px patches
    mask[0, 1] = mask[1, 2] = mask[1, 3] = True
    got = smooth_l1_masked(pred, target, mask, beta=0.01, patch_size=4)
    pix = mask.reshape(2, 1, 2, 2).repeat_interleave(4, 2).repeat_interleave(4, 3).expand(-1, 3, -1, -1)
    want = F.smooth_l1_loss(pred[pix], target[pix], beta=0.01)
    assert torch.allclose(got, want)


def test_loss_kinds_and_empty_mask():
    p, t = torch.full((1, 3, 2, 2), 0.5), torch.zeros(1, 3, 2, 2)
    m = torch.ones(1, 2, 2)
    assert smooth_l1_masked(p, t, m, kind="l1").item() == pytest.approx(0.5)
    assert smooth_l1_masked(p, t, m, kind="l2").item() == pytest.approx(0.25)
    with pytest.raises(ValueError):
        smooth_l1_masked(p, t, torch.zeros(1, 2, 2))
    with pytest.raises(ValueError):
        smooth_l1_masked(p, t, m, kind="huber2")


def test_adamw_matches_torch_optimizer():
    g = torch.Generator().manual_seed(0)
    params = {"w": torch.randn(5, 3, generator=g), "b.bias": torch.randn(3, generator=g)}
    ref = {k: torch.nn.Parameter(v.clone()) for k, v in params.items()}
    cfg = TrainConfig(weight_decay=0.05)
    opt = torch.optim.AdamW([{"params": [ref["w"]], "weight_decay": 0.05},
                             {"params": [ref["b.bias"]], "weight_decay": 0.0}],
                            lr=1e-2, betas=(0.9, 0.999), eps=1e-8)
    state = OptimizerState.zeros_like(params)
    for _ in range(5):
        grads = {k: torch.randn(v.shape, generator=g) for k, v in params.items()}
        adamw_step(params, grads, state, 1e-2, cfg)
        for k, p in ref.items():
            p.grad = grads[k].clone()
        opt.step()
    for k in params:
        assert torch.allclose(params[k], ref[k].detach(), atol=1e-6)


def test_adamw_rejects_non_finite_gradient():
    params = {"w": torch.zeros(2)}
    with pytest.raises(FloatingPointError):
        adamw_step(params, {"w": torch.tensor([1.0, float("inf")])},
                   OptimizerState.zeros_like(params), 1e-3, TrainConfig())


def test_compute_gradients_simple_quadratic():
    params = {"a": torch.tensor([1.0, 2.0], requires_grad=True),
              "unused": torch.zeros(3, requires_grad=True)}
    grads = compute_gradients((params["a"] ** 2).sum(), params)
    assert grads["a"].tolist() == [2.0, 4.0]
    assert grads["unused"].tolist() == [0.0, 0.0, 0.0]
    with pytest.raises(RuntimeError):
        compute_gradients(torch.tensor(1.0), params)


def test_cosine_schedule_closed_form():
    total, base = 1000, 1e-3
    assert cosine_lr(0, total, base) == 0.0
    assert cosine_lr(50, total, base) == pytest.approx(base / 2)
    assert cosine_lr(100, total, base) == pytest.approx(base)
    mid = 100 + 900 / 2
    assert cosine_lr(mid, total, base) == pytest.approx(base / 2)
    assert cosine_lr(total, total, base) == pytest.approx(0.0, abs=1e-15)
    assert cosine_lr(10, total, base, warmup_fraction=0.0) == pytest.approx(
        base * 0.5 * (1 + math.cos(math.pi * 10 / total)))


def test_sample_task_frequencies():
    rng = np.random.default_rng(0)
    draws = [sample_task(rng, {"semseg": 0.2, "depth": 0.1}) for _ in range(6000)]
    assert draws.count("semseg") / 6000 == pytest.approx(2 / 3, abs=0.02)
    with pytest.raises(ValueError):
        sample_task(rng, {"semseg": -1.0, "depth": 2.0})


def _toy_datasets(n=4, size=16):
    rng = np.random.default_rng(0)
    out = {}
    for task in ("semseg", "depth"):
        out[task] = [TaskSample(task, rng.integers(0, 256, (size, size, 3)).astype(np.uint8),
                                rng.integers(0, 256, (size, size, 3)).astype(np.uint8))
                     for _ in range(n)]
    return out


def _toy_cfgs(**train_kw):
    mc = ModelConfig(embed_dim=16, depth=4, num_heads=2, merge_after=1, patch_size=4,
                     img_size=(16, 16))
    tc = TrainConfig(total_iters=3, batch_size=2, log_every=0, augment={"out_size": 16},
                     **train_kw)
    return mc, tc


def test_assemble_batch_shapes_and_mask_fraction():
    mc, tc = _toy_cfgs()
    x_in, x_out, m, tasks = assemble_batch(_toy_datasets(), tc, mc, np.random.default_rng(1))
    assert x_in.shape == x_out.shape == (2, 3, 32, 16)
    assert m.shape == (2, mc.num_patches)
    assert set(tasks) <= {"semseg", "depth"}


def test_mask_only_second_output_when_requested():
    mc, tc = _toy_cfgs(mask_prompt_half=False)
    _, _, m, _ = assemble_batch(_toy_datasets(), tc, mc, np.random.default_rng(1))
    half = mc.num_patches // 2
    assert not m[:, :half].any() and m[:, half:].any()


def test_train_writes_artifacts_and_changes_weights(tmp_path):
    mc, tc = _toy_cfgs()
    seen = []
    params, rows = train(tc, mc, _toy_datasets(), out_dir=tmp_path,
                         callback=lambda it, loss: seen.append(it))
    assert seen == [0, 1, 2] and len(rows) == 3
    assert all(math.isfinite(r["loss"]) for r in rows)
    loaded, cfg = load_checkpoint(tmp_path / "checkpoint.bin")
    assert cfg == mc
    assert any(not torch.equal(loaded[k], v) for k, v in init_params(mc, tc.seed).items())
    with open(tmp_path / "loss.csv") as f:
        assert [r["iteration"] for r in csv.DictReader(f)] == ["0", "1", "2"]


def test_train_needs_matching_data():
    mc, tc = _toy_cfgs()
    with pytest.raises(ValueError):
        train(tc, mc, {"keypoint": _toy_datasets()["depth"]})


def test_train_config_accepts_augment_table():
    tc = TrainConfig(augment={"scale": [0.5, 1.0], "out_size": 32})
    assert tc.augment.scale == (0.5, 1.0) and tc.augment.out_size == 32
    with pytest.raises(ValueError):
        TrainConfig(warmup_fraction=1.0)


def test_smooth_l1_at_the_kink():
    beta = 0.01
    pred = torch.zeros(1, 3, 2, 2)
    pred[0, 0, 0, 0] = beta
    mask = torch.zeros(1, 1, 1, dtype=torch.bool)
    mask[0, 0, 0] = True
    loss = smooth_l1_masked(pred, torch.zeros(1, 3, 2, 2), mask, beta=beta, patch_size=2)
    # one patch of 4 pixels x 3 channels, only one entry differs by beta
    assert loss.item() == pytest.approx((0.5 * beta) / 12)
    assert smooth_l1_masked(pred, pred, mask, beta, 2).item() == 0.0


def test_adam_first_step_is_sign_like():
    params = {"w": torch.tensor([1.0, 1.0, 1.0])}
    g = torch.tensor([0.3, -2.0, 1e-3])
    adamw_step(params, {"w": g}, OptimizerState.zeros_like(params), 0.1,
               TrainConfig(weight_decay=0.0))
    want = 1.0 - 0.1 * g / (g.abs() + 1e-8)
    assert torch.allclose(params["w"], want, atol=1e-6)
    zero = {"w": torch.ones(2)}
    adamw_step(zero, {"w": torch.zeros(2)}, OptimizerState.zeros_like(zero), 0.1,
               TrainConfig(weight_decay=0.0))
    assert torch.equal(zero["w"], torch.ones(2))


def test_gradients_scale_linearly():
    p = {"a": torch.tensor([0.5, -1.0], requires_grad=True)}
    g1 = compute_gradients((p["a"] ** 3).sum(), p)["a"]
    g3 = compute_gradients(3 * (p["a"] ** 3).sum(), p)["a"]
    assert torch.allclose(g3, 3 * g1)


def test_schedule_continuous_and_nonincreasing():
    total, base = 500, 1e-3
    lrs = [cosine_lr(s, total, base) for s in range(total + 1)]
    peak = lrs.index(max(lrs))
    assert peak == 50 and lrs[49] < lrs[50]
    assert all(a >= b for a, b in zip(lrs[peak:], lrs[peak + 1:]))
    assert abs(lrs[51] - lrs[50]) < base * 1e-3


def test_sample_task_single_and_seeded():
    rng = np.random.default_rng(0)
    assert {sample_task(rng, {"A": 1.0}) for _ in range(20)} == {"A"}
    r1, r2 = np.random.default_rng(4), np.random.default_rng(4)
    a = [sample_task(r1, PUBLISHED_TASK_WEIGHTS) for _ in range(50)]
    b = [sample_task(r2, PUBLISHED_TASK_WEIGHTS) for _ in range(50)]
    assert a == b and len(set(a)) > 1
    with pytest.raises(ValueError):
        sample_task(rng, {"A": 0.0})


def test_published_mix_frequencies():
    rng = np.random.default_rng(1)
    names = list(PUBLISHED_TASK_WEIGHTS)
    w = np.array([PUBLISHED_TASK_WEIGHTS[k] for k in names])
    counts = {k: 0 for k in names}
    for _ in range(100_000):
        counts[sample_task(rng, PUBLISHED_TASK_WEIGHTS)] += 1
    for k, p in zip(names, w / w.sum()):
        assert abs(counts[k] / 100_000 - p) <= 0.02


def test_zero_iterations_keeps_init(tmp_path):
    mc, _ = _toy_cfgs()
    tc = TrainConfig(total_iters=0, batch_size=2, log_every=0, augment={"out_size": 16})
    params, rows = train(tc, mc, _toy_datasets(), out_dir=tmp_path)
    assert rows == []
    loaded, _ = load_checkpoint(tmp_path / "checkpoint.bin")
    init = init_params(mc, tc.seed)
    assert all(torch.equal(loaded[k], init[k]) for k in init)


def test_identical_seeds_identical_logs():
    mc, tc = _toy_cfgs()
    _, a = train(tc, mc, _toy_datasets())
    _, b = train(tc, mc, _toy_datasets())
    assert a == b


def test_overfits_a_tiny_single_task_set():
    """200 iterations on four fixed samples cut the loss to a fifth."""
    rng = np.random.default_rng(0)
    samples = []
    for _ in range(4):
        img = np.zeros((16, 16, 3), np.uint8)
        y, x = rng.integers(0, 10, 2)
        img[y:y + 6, x:x + 6] = 200
        samples.append(TaskSample("depth", img, 255 - img))
    mc = ModelConfig(embed_dim=32, depth=2, num_heads=2, merge_after=1, patch_size=4,
                     img_size=(16, 16), drop_path_rate=0.0)
    tc = TrainConfig(total_iters=200, batch_size=4, log_every=0, base_lr=3e-3,
                     task_weights={"depth": 1.0},
                     augment={"scale": [1.0, 1.0], "ratio": [1.0, 1.0], "out_size": 16,
                              "flip_prob": 0.0})
    _, rows = train(tc, mc, {"depth": samples})
    first = np.mean([r["loss"] for r in rows[:10]])
    last = np.mean([r["loss"] for r in rows[-10:]])
    assert last < 0.2 * first


def test_bf16_autocast_trains_float32_weights_deterministically():
    mc, tc = _toy_cfgs(precision="bf16")
    pa, a = train(tc, mc, _toy_datasets())
    pb, b = train(tc, mc, _toy_datasets())
    assert a == b and all(math.isfinite(r["loss"]) for r in a)
    assert all(v.dtype == torch.float32 for v in pa.values())
    assert all(torch.equal(pa[k], pb[k]) for k in pa)
    _, full = train(_toy_cfgs()[1], mc, _toy_datasets())
    # reduced precision changes the numbers, not the scale of the loss
    assert a[0]["loss"] == pytest.approx(full[0]["loss"], rel=0.05)
    with pytest.raises(ValueError):
        TrainConfig(precision="fp16")
