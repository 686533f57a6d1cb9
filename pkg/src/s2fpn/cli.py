"""Command-line interface: train / eval / infer / analyze / gradcheck.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric-check failure.
"""

from __future__ import annotations

import argparse
import contextlib
import sys
from pathlib import Path

import numpy as np

from .analysis import benchmark_latency, count_flops
from .config import RunConfig, parse_config
from .dataset import Palette, SegDataset, load_palette
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericCheckError,
    ShapeError,
)
from .imageio import read_ppm, write_pgm, write_ppm
from .model import S2FPN
from .serialize import load_model
from .tensor import Tensor, no_grad, set_default_dtype
from .trainer import Trainer, evaluate_model
from .verification import ALL_SCOPES, run_verification


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="s2fpn", description=__doc__)
    parser.add_argument("--config", help="run configuration file (key = value lines)")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--threads", type=int, help="cap BLAS threads for the command")
    parser.add_argument("--f64", action="store_true", help="run in float64")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model per the run config")
    p.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("eval", help="per-class IoU and mean IoU on a split")
    p.add_argument("checkpoint")
    p.add_argument("--split", default="val")
    p.add_argument("--csv", default="eval_iou.csv", help="where to write the CSV table")

    p = sub.add_parser("infer", help="segment one image; writes label map + overlay")
    p.add_argument("checkpoint")
    p.add_argument("image", help="input PPM (P6) image")
    p.add_argument("out", help="output path prefix (.pgm and .ppm are appended)")
    p.add_argument("--blend", type=float, default=0.5, help="overlay alpha in [0, 1]")

    p = sub.add_parser("analyze", help="parameter/FLOP report, optional latency")
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--csv", help="also write the report as CSV")
    p.add_argument("--latency", action="store_true")
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--iters", type=int, default=10)

    p = sub.add_parser("gradcheck", help="finite-difference verification")
    p.add_argument("scope", nargs="?", default="all", choices=("all",) + ALL_SCOPES)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.add_argument("--tolerance", type=float, default=1e-4)

    return parser


def _load_config(args) -> RunConfig:
    if args.config:
        cfg = parse_config(args.config)
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _build_model(cfg: RunConfig) -> S2FPN:
    return S2FPN(
        backbone=cfg.backbone,
        pyramid_width=cfg.pyramid_width,
        num_classes=cfg.num_classes,
        dropout_p=cfg.dropout,
        seed=cfg.seed,
    )


def _palette_for(cfg: RunConfig) -> Palette:
    palette = load_palette(cfg.palette)
    if len(palette) != cfg.num_classes:
        raise ConfigError(
            f"palette {cfg.palette!r} has {len(palette)} classes, config says {cfg.num_classes}"
        )
    return palette


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if not cfg.dataset:
        raise ConfigError("config is missing the 'dataset' key")
    dataset = SegDataset(cfg.dataset)
    trainer = Trainer(cfg, dataset)
    summary = trainer.run(resume=args.resume)
    print(f"trained {summary['iterations']} iterations")
    if summary["final_loss"] is not None:
        print(f"final loss {summary['final_loss']:.6f}")
    if summary["best_miou"] >= 0:
        print(f"best val mIoU {summary['best_miou']:.4f}")
    print(f"checkpoints under {trainer.out_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    palette = _palette_for(cfg)
    model = _build_model(cfg)
    load_model(args.checkpoint, model)
    dataset = SegDataset(cfg.dataset) if cfg.dataset else None
    if dataset is None:
        raise ConfigError("config is missing the 'dataset' key")
    matrix = evaluate_model(model, dataset, args.split)
    per_class = matrix.iou()
    width = max(len(n) for n in (*palette.names, "class", "mIoU")) + 2
    print(f"{'class':<{width}}iou")
    for name, iou in zip(palette.names, per_class):
        text = "-" if np.isnan(iou) else f"{iou:.4f}"
        print(f"{name:<{width}}{text}")
    print(f"{'mIoU':<{width}}{matrix.mean_iou():.4f}")
    lines = ["class,iou"]
    for name, iou in zip(palette.names, per_class):
        lines.append(f"{name},{'' if np.isnan(iou) else f'{iou:.6f}'}")
    lines.append(f"mIoU,{matrix.mean_iou():.6f}")
    Path(args.csv).write_text("\n".join(lines) + "\n")
    print(f"csv written to {args.csv}")
    return 0


def cmd_infer(args) -> int:
    cfg = _load_config(args)
    palette = _palette_for(cfg)
    model = _build_model(cfg)
    load_model(args.checkpoint, model)
    image = read_ppm(args.image)
    h, w, _ = image.shape
    stride = model.backbone.max_stride
    if h % stride or w % stride:
        raise DataError(
            f"image dims ({h}, {w}) must be divisible by {stride} for this backbone"
        )
    chw = image.astype(np.float32).transpose(2, 0, 1)[None] / 255.0
    chw = (chw - model.input_mean.data) / model.input_std.data
    model.eval()
    with no_grad():
        logits = model(Tensor(chw.astype(np.float32)))
    pred = logits.data.argmax(axis=1)[0].astype(np.uint8)
    out = Path(args.out)
    label_path = out.with_suffix(".pgm")
    overlay_path = out.with_suffix(".ppm")
    write_pgm(label_path, pred)
    colors = palette.color_map()[pred]
    blend = min(max(args.blend, 0.0), 1.0)
    overlay = np.clip(
        blend * colors.astype(np.float64) + (1.0 - blend) * image.astype(np.float64),
        0,
        255,
    ).astype(np.uint8)
    write_ppm(overlay_path, overlay)
    print(f"label map written to {label_path}")
    print(f"overlay written to {overlay_path}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _load_config(args)
    model = _build_model(cfg)
    shape = (args.batch, 3, args.height, args.width)
    report = count_flops(model, shape)
    if args.latency:
        report.latency = benchmark_latency(
            model, shape, warmup=args.warmup, iters=args.iters, seed=cfg.seed, threads=1
        )
    print(report.to_text())
    if args.latency and args.threads and args.threads != 1:
        # single-thread baseline above; parallel-kernel numbers alongside
        parallel = benchmark_latency(
            model, shape, warmup=args.warmup, iters=args.iters, seed=cfg.seed,
            threads=args.threads,
        )
        print(
            f"latency ({args.threads} threads): mean {parallel.mean_ms:.2f} ms  "
            f"p50 {parallel.p50_ms:.2f} ms  p95 {parallel.p95_ms:.2f} ms  "
            f"fps {parallel.fps:.2f}  ({parallel.samples} samples)"
        )
    if args.csv:
        Path(args.csv).write_text(report.to_csv() + "\n")
        print(f"csv written to {args.csv}")
    return 0


def cmd_gradcheck(args) -> int:
    seeds = tuple(range(args.seeds))
    worst, failures = run_verification(args.scope, seeds=seeds, tolerance=args.tolerance)
    for name in sorted(worst):
        status = "FAIL" if name in failures else "ok"
        print(f"{name:<24} max rel err {worst[name]:.3e}  {status}")
    if failures:
        raise NumericCheckError(f"gradient checks failed: {', '.join(failures)}")
    print(f"all {len(worst)} checks within {args.tolerance:g}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
}


@contextlib.contextmanager
def _thread_cap(threads):
    if not threads:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        yield
        return
    with threadpool_limits(limits=threads):
        yield


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.f64:
            set_default_dtype(np.float64)
        try:
            with _thread_cap(args.threads):
                return _COMMANDS[args.command](args)
        finally:
            if args.f64:
                set_default_dtype(np.float32)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericCheckError as exc:
        print(f"numeric check failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
