"""End-to-end command tests, run in-process through ``main``."""
import csv
import json

import numpy as np
import pytest

from painter.cli import (EXIT_INVALID, EXIT_MISSING, EXIT_OK, EXIT_USAGE, main)
from painter.image import load_image, save_image
from painter.native_io import load_labels_png, save_labels_png

TINY = """
[model]
embed_dim = 16
depth = 2
num_heads = 2
merge_after = 1
patch_size = 8
img_size = [32, 32]

[train]
total_iters = 2
batch_size = 2
log_every = 0

[train.augment]
out_size = 32

[synth]
size = 32
extent = [8, 16]
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small dataset plus a 2-iteration checkpoint shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.toml"
    cfg.write_text(TINY)
    assert main(["make-synth", "--config", str(cfg), "--tasks", "semseg,depth,keypoint,instance",
                 "--count", "5", "--out", str(root / "data")]) == EXIT_OK
    assert main(["train", "--config", str(cfg), "--data", str(root / "data" / "manifest.jsonl"),
                 "--out", str(root / "run")]) == EXIT_OK
    return root, cfg


def test_make_synth_layout(workspace):
    root, _ = workspace
    recs = [json.loads(line) for line in (root / "data" / "manifest.jsonl").read_text().splitlines()]
    assert len(recs) == 20
    for r in recs:
        for key in ("input", "target", "native"):
            assert (root / "data" / r[key]).is_file()
        assert r["meta"]["num_classes"] == 8


def test_train_artifacts(workspace):
    root, _ = workspace
    run = root / "run"
    assert (run / "checkpoint.bin").is_file()
    rows = list(csv.DictReader(open(run / "loss.csv")))
    assert [r["iteration"] for r in rows] == ["0", "1"]
    assert json.loads((run / "run_config.json").read_text())["model"]["embed_dim"] == 16


@pytest.mark.parametrize("task", ["semseg", "depth", "keypoint", "instance"])
def test_encode_decode_roundtrip_through_files(workspace, task, tmp_path):
    root, _ = workspace
    native = next((root / "data" / "native").glob(f"{task}_00000.*"))
    enc, dec = tmp_path / "enc.png", tmp_path / f"dec{native.suffix}"
    assert main(["encode", "--task", task, "--num-classes", "8", "--native", str(native),
                 "--out", str(enc)]) == EXIT_OK
    assert np.array_equal(load_image(enc), load_image(root / "data" / "target" / f"{task}_00000.png"))
    assert main(["decode", "--task", task, "--num-classes", "8", "--image", str(enc),
                 "--out", str(dec)]) == EXIT_OK
    if task == "semseg":
        assert np.array_equal(load_labels_png(dec), load_labels_png(native))


def test_eval_perfect_predictions(workspace, tmp_path):
    root, _ = workspace
    manifest = root / "data" / "manifest.jsonl"
    for task, key, ideal in (("semseg", "miou", 1.0), ("depth", "rmse", 0.0)):
        out = tmp_path / f"{task}.csv"
        assert main(["eval", "--task", task, "--pred", str(root / "data" / "target"),
                     "--data", str(manifest), "--out", str(out)]) == EXIT_OK
        row = next(csv.DictReader(open(out)))
        assert float(row[key]) == pytest.approx(ideal, abs=10 / 255)


def test_eval_against_gt_directory(tmp_path):
    labels = np.random.default_rng(0).integers(0, 4, (16, 16))
    (tmp_path / "gt").mkdir()
    save_labels_png(labels, tmp_path / "gt" / "a.png")
    assert main(["encode", "--task", "semseg", "--num-classes", "4",
                 "--native", str(tmp_path / "gt" / "a.png"),
                 "--out", str(tmp_path / "pred.png")]) == EXIT_OK
    assert main(["eval", "--task", "semseg", "--num-classes", "4", "--pred",
                 str(tmp_path / "pred.png"), "--gt", str(tmp_path / "gt" / "a.png")]) == EXIT_OK


def test_infer_writes_prediction_canvas_and_native(workspace, tmp_path):
    root, cfg = workspace
    data = root / "data"
    code = main(["infer", "--config", str(cfg), "--checkpoint", str(root / "run" / "checkpoint.bin"),
                 "--prompt-input", str(data / "input" / "depth_00000.png"),
                 "--prompt-output", str(data / "target" / "depth_00000.png"),
                 "--query", str(data / "input" / "depth_00001.png"),
                 "--task", "depth", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert load_image(tmp_path / "depth_00001.png").shape == (32, 32, 3)
    assert load_image(tmp_path / "depth_00001_canvas.png").shape == (64, 32, 3)
    assert (tmp_path / "depth_00001_native.pgm").is_file()


def test_prompt_search_and_learn(workspace, tmp_path):
    root, cfg = workspace
    common = ["--config", str(cfg), "--checkpoint", str(root / "run" / "checkpoint.bin"),
              "--data", str(root / "data" / "manifest.jsonl"), "--task", "semseg"]
    assert main(["prompt-search", *common, "--candidates", "2", "--queries", "2",
                 "--out", str(tmp_path / "s")]) == EXIT_OK
    info = json.loads((tmp_path / "s" / "prompt.json").read_text())
    assert len(info["scores"]) == 2 and info["task"] == "semseg"
    assert main(["prompt-search", *common, "--queries", "2", "--exhaustive",
                 "--out", str(tmp_path / "x")]) == EXIT_OK
    assert len(json.loads((tmp_path / "x" / "prompt.json").read_text())["scores"]) == 3
    assert main(["prompt-learn", *common, "--queries", "2", "--steps", "2",
                 "--out", str(tmp_path / "l")]) == EXIT_OK
    learned = json.loads((tmp_path / "l" / "prompt.json").read_text())
    assert learned["loss"] <= learned["init_loss"]
    assert main(["infer", "--config", str(cfg), "--checkpoint",
                 str(root / "run" / "checkpoint.bin"), "--prompt", str(tmp_path / "l"),
                 "--input", str(root / "data" / "input" / "semseg_00004.png"),
                 "--out", str(tmp_path / "p")]) == EXIT_OK


def test_visualize_grid(tmp_path):
    for i in range(3):
        save_image(np.full((8, 6, 3), 40 * i, np.uint8), tmp_path / f"{i}.png")
    out = tmp_path / "grid.png"
    assert main(["visualize", *(str(tmp_path / f"{i}.png") for i in range(3)), "--cols", "2",
                 "--out", str(out)]) == EXIT_OK
    grid = load_image(out)
    assert grid.shape == (8 * 2 + 2, 6 * 2 + 2, 3)
    assert grid[10, 0].tolist() == [80, 80, 80] and grid[8, 0].tolist() == [255, 255, 255]


def test_exit_codes(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["decode", "--task", "optical-flow", "--image", "x", "--out", "y"]) == EXIT_USAGE
    assert main(["decode", "--task", "depth", "--image", str(tmp_path / "nope.png"),
                 "--out", str(tmp_path / "o.pgm")]) == EXIT_MISSING
    assert main(["infer", "--checkpoint", str(tmp_path / "none.bin"), "--prompt", str(tmp_path),
                 "--input", str(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_MISSING
    (tmp_path / "bad.png").write_text("not an image")
    assert main(["decode", "--task", "depth", "--image", str(tmp_path / "bad.png"),
                 "--out", str(tmp_path / "o.pgm")]) == EXIT_INVALID
    (tmp_path / "bad.toml").write_text("[model]\nembed_dim = 'x'\nnope = 1\n")
    assert main(["make-synth", "--config", str(tmp_path / "bad.toml"), "--count", "1",
                 "--out", str(tmp_path / "d")]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "unknown keys" in err and "nope" in err


def test_mismatched_prompt_is_invalid(workspace, tmp_path):
    root, cfg = workspace
    save_image(np.zeros((16, 16, 3), np.uint8), tmp_path / "small.png")
    code = main(["infer", "--checkpoint", str(root / "run" / "checkpoint.bin"),
                 "--prompt-input", str(tmp_path / "small.png"),
                 "--prompt-output", str(tmp_path / "small.png"),
                 "--input", str(root / "data" / "input" / "depth_00000.png"),
                 "--out", str(tmp_path / "o")])
    assert code == EXIT_INVALID
