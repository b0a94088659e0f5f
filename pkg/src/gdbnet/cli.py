"""Command-line entry points.

Exit codes: 0 success, 1 runtime/I-O failure, 2 usage error,
3 numerical failure. stdout carries machine-readable results only;
logs go to stderr. GDB_THREADS caps worker parallelism.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import torch

from . import classical, metrics
from .checkpoint import checkpoint_load, checkpoint_save
from .errors import GdbError, NumericalError
from .imagecore import load_image, save_image, to_grayscale
from .networks import CoarseNetConfig, GdbModel, RefineNetConfig
from .pipeline import TrainConfig, binarize_document, ingest_dataset, train_end_to_end

_MODEL_KEYS = ("base_width", "n_res")
_TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))


def _parse_config_file(path) -> dict:
    """key=value pairs, one per line, '#' comments; unknown keys rejected."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _TRAIN_KEYS + _MODEL_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        if raw.lower() in ("true", "false"):
            values[key] = raw.lower() == "true"
        elif key in ("lr", "beta1", "beta2"):
            values[key] = float(raw)
        else:
            values[key] = int(raw)
    return values


def _build_model(cfg_values: dict) -> GdbModel:
    width = cfg_values.get("base_width", 32)
    n_res = cfg_values.get("n_res", 4)
    return GdbModel(coarse_cfg=CoarseNetConfig(base_width=width, n_res=n_res),
                    refine_cfg=RefineNetConfig(base_width=width))


def cmd_baseline(args) -> int:
    img = to_grayscale(load_image(args.input))
    if args.method == "otsu":
        t = classical.otsu_threshold(img)
        out = classical.binarize_otsu(img)
        print(t)
    else:
        params = classical.LocalStatsWindow(
            window=args.window,
            k=args.k if args.k is not None else (0.2 if args.method == "sauvola" else -0.2))
        print(f"{args.method}: window={params.window} k={params.k} R={params.R}",
              file=sys.stderr)
        fn = (classical.binarize_sauvola if args.method == "sauvola"
              else classical.binarize_niblack)
        out = fn(img, params)
    save_image(out, args.output)
    return 0


def cmd_edge(args) -> int:
    save_image(classical.sobel_edge(to_grayscale(load_image(args.input))), args.output)
    return 0


def cmd_train(args) -> int:
    values = _parse_config_file(args.config) if args.config else {}
    model_values = {k: values.pop(k) for k in _MODEL_KEYS if k in values}
    cfg = TrainConfig(**values)
    if args.steps is not None:
        cfg = replace(cfg, steps=args.steps)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)

    model = _build_model(model_values)
    start_step = 0
    if args.resume:
        start_step = checkpoint_load(model, args.resume)
        print(f"resuming from step {start_step}", file=sys.stderr)
    print(f"parameters: {model.parameter_count()}", file=sys.stderr)

    pairs = ingest_dataset(args.data_dir)
    log_path = Path(str(args.out_checkpoint) + ".log.csv")
    model, _ = train_end_to_end(pairs, cfg, model=model, log_path=log_path,
                                start_step=start_step)
    checkpoint_save(model, args.out_checkpoint, step=start_step + cfg.steps)
    print(f"checkpoint written to {args.out_checkpoint}", file=sys.stderr)
    return 0


def cmd_binarize(args) -> int:
    values = _parse_config_file(args.config) if args.config else {}
    model = _build_model(values)
    checkpoint_load(model, args.checkpoint)
    img = load_image(args.input)
    out = binarize_document(img, model, use_multiscale=not args.no_multiscale,
                            iterations=args.iterate)
    save_image(out, args.output)
    return 0


def cmd_evaluate(args) -> int:
    _, mean = metrics.dataset_report(args.pred_dir, args.gt_dir, csv_path=args.report)
    psnr = "inf" if math.isinf(mean.psnr) else f"{mean.psnr:.6f}"
    print(f"MEAN,{mean.fm:.6f},{mean.p_fm:.6f},{psnr},{mean.drd:.6f}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gdbnet",
                                     description="Gated-convolution document binarization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("baseline", help="classical thresholding baselines")
    p.add_argument("--method", required=True, choices=("otsu", "sauvola", "niblack"))
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--window", type=int, default=25)
    p.add_argument("--k", type=float, default=None)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("edge", help="Sobel edge magnitude map")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_edge)

    p = sub.add_parser("train", help="end-to-end adversarial training")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--resume", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("binarize", help="binarize one document with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--no-multiscale", action="store_true")
    p.add_argument("--iterate", type=int, default=0)
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_binarize)

    p = sub.add_parser("evaluate", help="DIBCO metrics over a prediction directory")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    threads = os.environ.get("GDB_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (GdbError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
