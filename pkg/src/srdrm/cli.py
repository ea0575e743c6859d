"""Command-line interface.

Exit status: 0 on success, 1 on contract/configuration/format errors,
2 on numeric failures (NaN aborts).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .data import DatasetManifest, prepare_lr_sets
from .errors import CheckpointError, ContractViolation, NumericError, SrdrmError
from .train import TrainConfig, bench, eval_report, infer, load_train_config
from .train import train_adversarial, train_generative

__all__ = ["main"]


def _parse_scales(text: str):
    try:
        return tuple(int(s) for s in text.split(","))
    except ValueError:
        raise ContractViolation(f"--scales expects comma-separated integers, got {text!r}")


def _parse_roi(text: str):
    parts = text.split(",")
    if len(parts) != 4:
        raise ContractViolation(f"--roi expects X,Y,W,H, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise ContractViolation(f"--roi expects integers, got {text!r}")


def _parse_size(text: str):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise ContractViolation(f"--size expects WxH (e.g. 80x60), got {text!r}")


def _load_manifest(data_dir):
    path = Path(data_dir) / "manifest.txt"
    if not path.is_file():
        raise ContractViolation(f"no manifest.txt under {data_dir}; run prepare-data first")
    return DatasetManifest.load(path)


def _cmd_prepare_data(args):
    manifest = prepare_lr_sets(args.input, args.output, scales=_parse_scales(args.scales),
                               jpeg_quality=args.jpeg_quality, seed=args.seed)
    counts = {s: len(v) for s, v in manifest.splits.items()}
    print(f"prepared {counts} pairs at scales {manifest.scales} under {manifest.root}")
    if manifest.rejects:
        print(f"skipped unreadable: {', '.join(manifest.rejects)}")
    return 0


def _cmd_train(args):
    if args.config:
        config = load_train_config(args.config)
    else:
        config = TrainConfig()
    overrides = {}
    if args.scale is not None:
        overrides["scale"] = int(args.scale)
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.tiny:
        overrides["tiny_profile"] = True
    if overrides:
        from dataclasses import replace
        config = replace(config, **overrides)
    manifest = _load_manifest(args.data)
    run = train_adversarial if config.mode == "gan" else train_generative
    ckpts, _ = run(config, manifest, args.out, echo=print)
    print(f"wrote {len(ckpts)} checkpoint(s); final: {ckpts[-1]}")
    return 0


def _cmd_eval(args):
    manifest = _load_manifest(args.data)
    report = eval_report(args.ckpt, manifest, args.split, report_path=args.report)
    print(report.to_text(), end="")
    print(f"report written to {args.report} and {args.report}.csv")
    return 1 if report.rejects else 0


def _cmd_infer(args):
    roi = _parse_roi(args.roi) if args.roi else None
    infer(args.ckpt, args.input, roi=roi, out_path=args.output)
    print(f"wrote {args.output}")
    return 0


def _cmd_bench(args):
    report = bench(args.ckpt, _parse_size(args.size), args.iters)
    print(report.to_text(), end="")
    print(report.to_machine())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srdrm",
        description="Underwater single-image super-resolution toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="build paired HR/LR sets from HR images")
    p.add_argument("--input", required=True, help="directory of HR images")
    p.add_argument("--output", required=True, help="output dataset directory")
    p.add_argument("--scales", default="2,4,8", help="comma-separated subset of 2,4,8")
    p.add_argument("--jpeg-quality", type=int, default=85)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_prepare_data)

    p = sub.add_parser("train", help="train a super-resolution model")
    p.add_argument("--config", help="plain-text key=value training config")
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--scale", choices=["2", "4", "8"])
    p.add_argument("--mode", choices=["gen", "gan"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--out", required=True, help="output directory for checkpoints/logs")
    p.add_argument("--tiny", action="store_true", help="desk-scale architecture profile")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint over a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], required=True)
    p.add_argument("--report", required=True, help="report file (CSV twin gets .csv)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="super-resolve an image or a region of it")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--roi", help="X,Y,W,H crop in input pixels")
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("bench", help="per-frame latency of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--size", required=True, help="input size WxH, e.g. 80x60")
    p.add_argument("--iters", type=int, required=True)
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2
    except (ContractViolation, CheckpointError, SrdrmError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
