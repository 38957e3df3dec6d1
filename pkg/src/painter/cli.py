"""Command-line entry point: ``painter <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 missing file, 4 invalid input or
config, 5 numerical failure (non-finite loss or activations), 1 anything else.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .codecs import (encode_depth, encode_instances, encode_keypoints, encode_semseg)
from .config import ConfigError, RunConfig, config_to_dict, load_config
from .data import TASKS, load_dataset, read_manifest, write_manifest
from .evaluate import RESTORATION_TASKS, decode_prediction, evaluate, score_prediction
from .image import ImageFormatError, load_image, save_image
from .metrics import format_report
from .model import load_checkpoint
from .native_io import (load_depth_pgm, load_instances_txt, load_keypoints_txt, load_labels_png,
                        save_depth_pgm, save_instances_txt, save_keypoints_txt, save_labels_png)
from .synth import gen_scene, scene_tables, task_sample

log = logging.getLogger("painter")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_MISSING, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3, 4, 5

NATIVE_SUFFIX = {"depth": ".pgm", "semseg": ".png", "keypoint": ".txt", "instance": ".txt"}


def _set_threads() -> None:
    n = os.environ.get("PAINTER_NUM_THREADS")
    if n:
        import torch
        torch.set_num_threads(int(n))


# --- native ground truth on disk ----------------------------------------------------------

def save_native(task: str, value, path: Path) -> None:
    if task == "depth":
        save_depth_pgm(value, path)
    elif task == "semseg":
        save_labels_png(value, path)
    elif task == "keypoint":
        kps, (h, w) = value
        save_keypoints_txt(kps, h, w, path)
    elif task == "instance":
        insts, (h, w) = value
        save_instances_txt(insts, h, w, path)
    elif task in RESTORATION_TASKS:
        save_image(value, path)
    else:
        raise ValueError(f"unknown task {task!r}")


def load_native(task: str, path: Path):
    """Native ground truth in the form the metrics expect."""
    if task == "depth":
        return load_depth_pgm(path)
    if task == "semseg":
        return load_labels_png(path)
    if task == "keypoint":
        return load_keypoints_txt(path)[0]
    if task == "instance":
        return load_instances_txt(path)[0]
    if task in RESTORATION_TASKS:
        return load_image(path)
    raise ValueError(f"unknown task {task!r}")


def _native_suffix(task: str) -> str:
    return NATIVE_SUFFIX.get(task, ".png")


def _encode_native(task: str, path: Path, num_classes: int | None, kp_sigma: float = 2.0
                   ) -> np.ndarray:
    if task == "depth":
        return encode_depth(load_depth_pgm(path))
    if task == "semseg":
        if not num_classes:
            raise ValueError("--num-classes is required for semseg")
        return encode_semseg(load_labels_png(path), scene_tables(num_classes))
    if task == "keypoint":
        kps, (h, w) = load_keypoints_txt(path)
        return encode_keypoints(kps, h, w, sigma=kp_sigma)
    if task == "instance":
        insts, (h, w) = load_instances_txt(path)
        return encode_instances(insts, h, w)
    if task in RESTORATION_TASKS:
        return load_image(path)
    raise ValueError(f"unknown task {task!r}")


# --- commands -------------------------------------------------------------------------------

def cmd_make_synth(args, cfg: RunConfig) -> int:
    spec = cfg.synth
    if args.num_classes:
        spec = type(spec)(**{**spec.__dict__, "num_classes": args.num_classes})
    out = Path(args.out)
    for sub in ("input", "target", "native"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    ct = scene_tables(spec.num_classes)
    records = []
    for t_idx, task in enumerate(args.tasks):
        for i in range(args.count):
            rng = np.random.default_rng([args.seed, i])
            bundle = gen_scene(spec, rng)
            # corruption draws come from a task-specific stream
            sample = task_sample(bundle, task, ct, np.random.default_rng([args.seed, i, t_idx]),
                                 kp_sigma=cfg.keypoint.sigma)
            name = f"{task}_{i:05d}"
            save_image(sample.image, out / "input" / f"{name}.png")
            save_image(sample.target, out / "target" / f"{name}.png")
            h, w = bundle.labels.shape
            native = {"depth": bundle.depth, "semseg": bundle.labels,
                      "keypoint": (bundle.keypoints, (h, w)),
                      "instance": (bundle.instances, (h, w))}.get(task, bundle.image)
            native_path = out / "native" / f"{name}{_native_suffix(task)}"
            save_native(task, native, native_path)
            records.append({"task": task, "name": name,
                            "input": f"input/{name}.png", "target": f"target/{name}.png",
                            "native": str(native_path.relative_to(out)),
                            "meta": {"num_classes": spec.num_classes, "seed": args.seed,
                                     "index": i}})
    write_manifest(records, out / "manifest.jsonl")
    print(f"wrote {len(records)} samples to {out}")
    return EXIT_OK


def cmd_encode(args, cfg: RunConfig) -> int:
    img = _encode_native(args.task, Path(args.native), args.num_classes, cfg.keypoint.sigma)
    save_image(img, Path(args.out))
    return EXIT_OK


def cmd_decode(args, cfg: RunConfig) -> int:
    img = load_image(args.image)
    native = decode_prediction(args.task, img, args.num_classes, cfg.instance, cfg.keypoint)
    if args.task in ("keypoint", "instance"):
        native = (native, img.shape[:2])
    save_native(args.task, native, Path(args.out))
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    from .train import TrainConfig, train
    tc = cfg.train
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.iters is not None:
        overrides["total_iters"] = args.iters
    if overrides:
        tc = TrainConfig(**{**tc.__dict__, **overrides})
    datasets: dict[str, list] = {}
    for manifest in args.data:
        for task, samples in load_dataset(manifest).items():
            datasets.setdefault(task, []).extend(samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = config_to_dict(dataclasses.replace(cfg, train=tc))
    (out / "run_config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    _, rows = train(tc, cfg.model, datasets, out_dir=out)
    print(f"trained {len(rows)} iterations, final loss {rows[-1]['loss']:.5f}; "
          f"checkpoint at {out / 'checkpoint.bin'}")
    return EXIT_OK


def _load_prompt(args) -> tuple[np.ndarray, np.ndarray]:
    if args.prompt:
        d = Path(args.prompt)
        return load_image(d / "prompt_input.png"), load_image(d / "prompt_output.png")
    if not (args.prompt_input and args.prompt_output):
        raise ValueError("give --prompt DIR or both --prompt-input and --prompt-output")
    return load_image(args.prompt_input), load_image(args.prompt_output)


def _expand_inputs(paths: list[str]) -> list[Path]:
    out = []
    for p in map(Path, paths):
        out.extend(sorted(p.glob("*.png")) if p.is_dir() else [p])
    if not out:
        raise ValueError("no query images found")
    return out


def cmd_infer(args, cfg: RunConfig) -> int:
    from .inference import infer_batch
    params, mcfg = load_checkpoint(args.checkpoint)
    prompt = _load_prompt(args)
    paths = _expand_inputs(args.input)
    preds, canvases = infer_batch(params, mcfg, prompt, [load_image(p) for p in paths],
                                  cfg.infer.batch_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path, pred, canvas in zip(paths, preds, canvases):
        save_image(pred, out / f"{path.stem}.png")
        save_image(canvas, out / f"{path.stem}_canvas.png")
        if args.task:
            native = decode_prediction(args.task, pred, args.num_classes, cfg.instance,
                                       cfg.keypoint)
            if args.task in ("keypoint", "instance"):
                native = (native, pred.shape[:2])
            save_native(args.task, native, out / f"{path.stem}_native{_native_suffix(args.task)}")
    print(f"wrote {len(paths)} predictions to {out}")
    return EXIT_OK


def _manifest_native(manifest: Path, task: str) -> list[dict]:
    recs = [r for r in read_manifest(manifest) if r["task"] == task]
    if not recs:
        raise ValueError(f"{manifest} has no {task} samples")
    return recs


def cmd_eval(args, cfg: RunConfig) -> int:
    task = args.task
    pred_dir = Path(args.pred)
    if args.data:
        manifest = Path(args.data)
        recs = _manifest_native(manifest, task)
        names = [r["name"] for r in recs]
        gts = [load_native(task, manifest.parent / r["native"]) for r in recs]
        num_classes = args.num_classes or recs[0]["meta"].get("num_classes")
    else:
        if not args.gt:
            raise ValueError("give --data MANIFEST or --gt DIR")
        gt_dir = Path(args.gt)
        suffix = _native_suffix(task)
        gt_paths = sorted(gt_dir.glob(f"*{suffix}")) if gt_dir.is_dir() else [gt_dir]
        names = [p.stem for p in gt_paths]
        gts = [load_native(task, p) for p in gt_paths]
        num_classes = args.num_classes
    if pred_dir.is_dir():
        pred_imgs = [load_image(pred_dir / f"{n}.png") for n in names]
    else:
        pred_imgs = [load_image(pred_dir)]
    preds = [decode_prediction(task, p, num_classes, cfg.instance, cfg.keypoint)
             for p in pred_imgs]
    row = {"task": task, **evaluate(task, preds, gts, num_classes)}
    print(format_report([row], "text"), end="")
    if args.out:
        out = Path(args.out)
        tmp = out.with_name(f".{out.name}.tmp")
        tmp.write_text(format_report([row], "csv"))
        os.replace(tmp, out)
    return EXIT_OK


def _task_split(args, n_candidates: int, n_queries: int, exhaustive: bool = False):
    """Candidates come first in the manifest, queries right after them.

    With ``exhaustive`` the last ``n_queries`` samples are the queries and
    every other sample is a candidate.
    """
    manifest = Path(args.data)
    recs = _manifest_native(manifest, args.task)
    if exhaustive:
        n_candidates = len(recs) - n_queries
    need = n_candidates + n_queries
    if n_candidates < 1 or len(recs) < need:
        raise ValueError(f"need {max(need, n_queries + 1)} {args.task} samples, "
                         f"manifest has {len(recs)}")
    root = manifest.parent
    pairs = [(load_image(root / r["input"]), load_image(root / r["target"])) for r in recs[:need]]
    refs = [load_native(args.task, root / r["native"]) for r in recs[n_candidates:need]]
    num_classes = args.num_classes or recs[0]["meta"].get("num_classes")
    return pairs[:n_candidates], pairs[n_candidates:], refs, num_classes


def _pick(flag, default):
    return default if flag is None else flag


def _write_prompt(out: Path, pair, info: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    save_image(pair[0], out / "prompt_input.png")
    save_image(pair[1], out / "prompt_output.png")
    tmp = out / ".prompt.json.tmp"
    tmp.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, out / "prompt.json")


def cmd_prompt_search(args, cfg: RunConfig) -> int:
    from .prompts import search_prompts
    params, mcfg = load_checkpoint(args.checkpoint)
    pc = cfg.prompt
    exhaustive = args.exhaustive or pc.exhaustive
    cands, queries, refs, ncls = _task_split(args, _pick(args.candidates, pc.candidates),
                                             _pick(args.queries, pc.queries), exhaustive)
    metric = lambda pred, ref: score_prediction(args.task, pred, ref, ncls)
    best, pair, scores = search_prompts(params, mcfg, cands, [q for q, _ in queries], refs, metric)
    _write_prompt(Path(args.out), pair, {"task": args.task, "best_index": best, "scores": scores})
    print(f"best candidate {best} with score {scores[best]:.4f}")
    return EXIT_OK


def cmd_prompt_learn(args, cfg: RunConfig) -> int:
    from .image import to_u8
    from .prompts import learn_prompts
    params, mcfg = load_checkpoint(args.checkpoint)
    pc = cfg.prompt
    cands, queries, _, _ = _task_split(args, max(args.init_index + 1, 1),
                                       _pick(args.queries, pc.queries))
    init = _load_prompt(args) if (args.prompt or args.prompt_input) else cands[args.init_index]
    res = learn_prompts(params, mcfg, init, queries, _pick(args.steps, pc.steps),
                        lr=_pick(args.lr, pc.lr), beta=cfg.train.smooth_l1_beta)
    pair = tuple(to_u8(x) for x in res.pair)
    _write_prompt(Path(args.out), pair, {"task": args.task, "init_loss": res.init_loss,
                                         "loss": res.loss, "history": res.history})
    print(f"prompt loss {res.init_loss:.5f} -> {res.loss:.5f}")
    return EXIT_OK


def cmd_visualize(args, cfg: RunConfig) -> int:
    """Tile images row-major on a white background; smaller tiles sit top-left."""
    tiles = [load_image(p) for p in args.images]
    th = max(t.shape[0] for t in tiles)
    tw = max(t.shape[1] for t in tiles)
    cols = args.cols or len(tiles)
    rows = -(-len(tiles) // cols)
    gap = 2
    grid = np.full((rows * (th + gap) - gap, cols * (tw + gap) - gap, 3), 255, np.uint8)
    for k, t in enumerate(tiles):
        r, c = divmod(k, cols)
        y, x = r * (th + gap), c * (tw + gap)
        grid[y:y + t.shape[0], x:x + t.shape[1]] = t
    save_image(grid, Path(args.out))
    return EXIT_OK


# --- parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="painter", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"painter {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    def task_arg(sp, required=True):
        sp.add_argument("--task", choices=TASKS, required=required)
        sp.add_argument("--num-classes", type=int, default=None,
                        help="semantic classes (semseg color table size)")

    sp = add("make-synth", cmd_make_synth, "render a synthetic dataset")
    sp.add_argument("--tasks", type=lambda s: s.split(","), default=list(TASKS),
                    help="comma-separated task list")
    sp.add_argument("--count", type=int, default=100, help="samples per task")
    sp.add_argument("--num-classes", type=int, default=None)
    sp.add_argument("--out", required=True)

    sp = add("encode", cmd_encode, "native ground truth -> task output image")
    task_arg(sp)
    sp.add_argument("--native", required=True)
    sp.add_argument("--out", required=True)

    sp = add("decode", cmd_decode, "task output image -> native prediction")
    task_arg(sp)
    sp.add_argument("--image", required=True)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "masked image modeling on stitched pairs")
    sp.add_argument("--data", action="append", required=True, help="manifest (repeatable)")
    sp.add_argument("--iters", type=int, default=None)
    sp.add_argument("--out", required=True)

    def prompt_args(sp):
        sp.add_argument("--prompt", help="directory holding prompt_input.png / prompt_output.png")
        sp.add_argument("--prompt-input")
        sp.add_argument("--prompt-output")

    sp = add("infer", cmd_infer, "in-context prediction for query images")
    sp.add_argument("--checkpoint", required=True)
    prompt_args(sp)
    sp.add_argument("--input", "--query", dest="input", action="append", required=True,
                    help="query image or directory (repeatable)")
    task_arg(sp, required=False)
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "score predictions against native ground truth")
    task_arg(sp)
    sp.add_argument("--pred", required=True, help="prediction image or directory")
    sp.add_argument("--data", help="manifest whose native files are the ground truth")
    sp.add_argument("--gt", help="native ground-truth file or directory")
    sp.add_argument("--out", help="CSV report path")

    sp = add("prompt-search", cmd_prompt_search, "pick the best prompt among dataset samples")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    task_arg(sp)
    sp.add_argument("--candidates", type=int, default=None)
    sp.add_argument("--queries", type=int, default=None)
    sp.add_argument("--exhaustive", action="store_true",
                    help="try every sample that is not a query")
    sp.add_argument("--out", required=True)

    sp = add("prompt-learn", cmd_prompt_learn, "optimize prompt pixels with the model frozen")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    task_arg(sp)
    prompt_args(sp)
    sp.add_argument("--init-index", type=int, default=0)
    sp.add_argument("--queries", type=int, default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--out", required=True)

    sp = add("visualize", cmd_visualize, "tile images into one grid")
    sp.add_argument("images", nargs="+")
    sp.add_argument("--cols", type=int, default=None)
    sp.add_argument("--out", required=True)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is None and args.command == "make-synth":
        args.seed = 0
    try:
        _set_threads()
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except FileNotFoundError as e:
        print(f"painter: {e}", file=sys.stderr)
        return EXIT_MISSING
    except FloatingPointError as e:
        print(f"painter: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ImageFormatError, ValueError, KeyError) as e:
        print(f"painter: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
