"""Command-line surface: train, eval, localize, sweep, gen-data.

Every command reads flat key=value config files where it needs more
than a couple of options. Exit codes: 0 success, 1 usage problem,
2 unreadable or inconsistent data, 3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .data import (
    SyntheticConfig,
    load_sample,
    read_manifest,
    split_ids,
    write_dataset,
)
from .instances import (
    binarize,
    connected_components,
    extract_instances,
    format_instances,
)
from .metrics import format_report
from .model import CrowdLocalizer, ModelConfig, load_checkpoint
from .pnm import load_pgm, load_ppm, save_pgm, to_u8
from .tensor import Tensor, no_grad
from .train import (
    DEFAULT_GRID,
    TrainConfig,
    evaluate,
    load_training_checkpoint,
    threshold_sweep,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exceptions, not exits."""

    def error(self, message):
        raise UsageError(message)


def _load_dataset(dataset_dir):
    dataset_dir = Path(dataset_dir)
    if not dataset_dir.is_dir():
        raise FileNotFoundError(f"dataset directory {dataset_dir} not found")
    ids = read_manifest(dataset_dir)
    if not ids:
        raise ValueError(f"manifest in {dataset_dir} lists no samples")
    return [load_sample(dataset_dir, sid) for sid in ids]


def _load_image(path):
    path = Path(path)
    if path.suffix == ".pgm":
        gray = load_pgm(path).astype(np.float32) / 255.0
        return np.ascontiguousarray(np.stack([gray, gray, gray]))
    rgb = load_ppm(path).astype(np.float32) / 255.0
    return np.ascontiguousarray(rgb.transpose(2, 0, 1))


def _cmd_gen_data(args):
    flat = load_config(args.config)
    cfg = SyntheticConfig.from_flat(flat)
    count = flat.get("data.samples", 200)
    ids = write_dataset(cfg, count, Path(args.out))
    print(f"wrote {len(ids)} samples to {args.out}")
    return EXIT_OK


def _cmd_train(args):
    flat = load_config(args.config)
    if "data.dir" not in flat:
        raise ValueError("config is missing data.dir")
    samples = _load_dataset(flat["data.dir"])
    train_cfg = TrainConfig.from_flat(flat)
    ckpt = str(flat.get("out.checkpoint", "model.ckpt"))

    val_fraction = float(flat.get("data.val_fraction", 0.2))
    order = list(range(len(samples)))
    train_idx, val_idx = split_ids(order, seed=train_cfg.seed,
                                   val_fraction=val_fraction)
    train_set = [samples[i] for i in train_idx]
    val_set = [samples[i] for i in val_idx]

    if args.resume:
        model, opt, start = load_training_checkpoint(args.resume, train_cfg)
        print(f"resuming from {args.resume} at iteration {start}")
    else:
        model_cfg = ModelConfig.from_flat(flat)
        model = CrowdLocalizer(model_cfg, np.random.default_rng(train_cfg.seed))
        opt, start = None, 0

    def report(it, loss):
        if (it + 1) % 50 == 0 or it == 0:
            print(f"iter {it + 1:6d}  loss {loss:.5f}", flush=True)

    result = train(model, train_set, train_cfg, start_iter=start,
                   optimizer=opt, checkpoint_path=ckpt, on_iteration=report)
    print(f"trained iterations [{result.start_iter}, {result.end_iter}) "
          f"in {result.seconds:.1f}s; checkpoint {ckpt}")

    if val_set:
        sweep = threshold_sweep(model, val_set, train_cfg.threshold_grid)
        loc, cnt = evaluate(model, val_set, sweep.best_f1_threshold)
        print(f"validation at t={sweep.best_f1_threshold:.2f}:")
        print(format_report(loc, cnt))
    return EXIT_OK


def _cmd_eval(args):
    model, _ = load_checkpoint(args.ckpt)
    samples = _load_dataset(args.data)
    loc, cnt = evaluate(model, samples, args.threshold)
    print(format_report(loc, cnt))
    return EXIT_OK


def _cmd_localize(args):
    model, _ = load_checkpoint(args.ckpt)
    image = _load_image(args.image)
    model.eval()
    with no_grad():
        score = model(Tensor(image[None])).data[0, 0]
    labels = connected_components(binarize(score, args.threshold))
    instances = extract_instances(labels)

    out = Path(args.out)
    out.write_text(format_instances(instances, args.threshold))
    overlay = to_u8(score)
    for inst in instances:
        x, y = (int(round(v)) for v in inst.centroid)
        overlay[max(y - 2, 0) : y + 3, x] = 255
        overlay[y, max(x - 2, 0) : x + 3] = 255
    overlay_path = out.with_suffix(".pgm")
    save_pgm(overlay_path, overlay)
    print(f"{len(instances)} instances -> {out}, overlay -> {overlay_path}")
    return EXIT_OK


def _cmd_sweep(args):
    model, _ = load_checkpoint(args.ckpt)
    samples = _load_dataset(args.data)
    grid = DEFAULT_GRID
    if args.grid:
        grid = tuple(float(tok) for tok in args.grid.split(","))
    result = threshold_sweep(model, samples, grid)
    csv = result.to_csv()
    if args.out:
        Path(args.out).write_text(csv)
        print(f"wrote {args.out}")
    else:
        print(csv, end="")
    print(f"best_f1_threshold = {result.best_f1_threshold:.2f}")
    print(f"best_mae_threshold = {result.best_mae_threshold:.2f}")
    return EXIT_OK


def _build_parser():
    parser = _Parser(prog="crowdloc",
                     description="train and run the crowd localizer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None,
                   help="checkpoint to continue from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("localize", help="find heads in one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("sweep", help="threshold sweep on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--grid", default=None,
                   help="comma-separated thresholds (default 0.30..0.50)")
    p.add_argument("--out", default=None, help="write CSV here")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
