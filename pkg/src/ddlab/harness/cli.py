"""Command line entry point: ``ddlab <subcommand> [--config F] [--set k=v ...] [--out DIR]``."""

from __future__ import annotations

import argparse
import os
import sys

from .checkpoint import CheckpointError
from .config import ConfigError, ExperimentConfig
from .pipelines import MissingStageError, census_table, run_pipeline

SUBCOMMANDS = (
    "train-score",
    "distill",
    "sample",
    "eval",
    "relfid-sweep",
    "sigma-sweep",
    "freeze-ablation",
    "profile",
    "census",
)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddlab", description="Toy diffusion distillation laboratory.")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment config")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a dotted config key")
    common.add_argument("--out", default="runs/default", help="artifact directory (DDL_OUT overrides)")
    helps = {
        "train-score": "pre-train the score model",
        "distill": "distill the score model into a one-step generator",
        "sample": "draw a fixed-seed sample set",
        "eval": "evaluate teacher and generator against held-out data",
        "relfid-sweep": "rel/abs metrics for k-step teachers",
        "sigma-sweep": "rel/abs metrics for 2-step teachers over intermediate sigmas",
        "freeze-ablation": "distill once per layer-freezing mask",
        "profile": "per-layer activation profile along a sampling trajectory",
        "census": "parameter share per layer category",
    }
    cmds = {name: sub.add_parser(name, parents=[common], help=helps[name]) for name in SUBCOMMANDS}
    cmds["distill"].add_argument("--method", choices=("gdd", "gdd-i", "combined"))
    cmds["sample"].add_argument("--which", choices=("generator", "teacher"), default="generator")
    cmds["sample"].add_argument("--n", type=int)
    cmds["relfid-sweep"].add_argument("--steps", type=_int_list, help="teacher step counts, e.g. 1,2,4,8")
    cmds["sigma-sweep"].add_argument("--sigmas", type=_float_list, help="intermediate sigmas, e.g. 0.5,2,8,32")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    cfg.apply_overrides(args.set)
    method = getattr(args, "method", None)
    if method == "gdd-i":
        # alias for --method gdd --set distill.freeze=conv
        cfg.set("distill.method", "gdd")
        cfg.set("distill.freeze", "conv")
    elif method:
        cfg.set("distill.method", method)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = os.environ.get("DDL_OUT") or args.out
    try:
        cfg = _config(args)
        kw = {}
        if args.command == "relfid-sweep" and args.steps:
            kw["steps"] = args.steps
        elif args.command == "sigma-sweep" and args.sigmas:
            kw["sigmas"] = args.sigmas
        elif args.command == "sample":
            kw = {"which": args.which, "n": args.n}
        if args.command == "census":
            print(f"{'category':<10}{'count':>10}{'share':>9}")
            for cat, n, frac in census_table(cfg):
                print(f"{cat:<10}{n:>10}{100 * frac:>8.1f}%")
        report = run_pipeline(args.command, cfg, out, **kw)
    except (ConfigError, MissingStageError, CheckpointError, ValueError, OSError) as exc:
        print(f"ddlab {args.command}: error: {exc}", file=sys.stderr)
        return 1
    if args.command != "census":
        for name, value, *_ in report.rows():
            print(f"{name} = {value:.6g}")
    print(f"artifacts written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
