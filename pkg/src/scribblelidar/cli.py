"""Command-line front end: ``train``, ``pseudolabel``, ``distill``, ``eval``, ``synth``, ``stats``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .errors import ConfigError, ScribbleLidarError

EXIT_CODES = {"config": 2, "data": 3, "io": 4, "model": 5, "metric": 6}


def _parse_set(items) -> dict:
    """``section.key=value`` pairs (value parsed as JSON, else kept as text) to a nested dict."""
    out: dict = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON pipeline config")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="overrides the config's top-level seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry, e.g. crb.beta=0.3 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="scribblelidar", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="stage 1: mean teacher with PLS descriptors")
    p = sub.add_parser("pseudolabel", parents=[common], help="stage 2: CRB pseudo-labels")
    p.add_argument("--checkpoint", type=Path, required=True)
    p = sub.add_parser("distill", parents=[common], help="stage 3: retrain on raw points")
    p.add_argument("--pseudo", type=Path, required=True, help="output directory of the pseudolabel stage")
    p.add_argument("--init-checkpoint", type=Path, help="start from this 4-input checkpoint")
    p = sub.add_parser("eval", parents=[common], help="score a checkpoint or label files")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint", type=Path)
    g.add_argument("--pred-root", type=Path, help="root holding sequences/<seq>/<pred-dir>/*.label")
    p.add_argument("--pred-dir", default="pseudo")
    p.add_argument("--model", choices=("teacher", "student"), default="teacher")
    p.add_argument("--sequences", nargs="+")
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    sub.add_parser("stats", parents=[common], help="class and range distribution of scribbles")
    return ap


def run(args: argparse.Namespace) -> dict:
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = pipeline.PipelineConfig.load(args.config, overrides)
    out = args.out if args.out is not None else Path("runs") / args.command
    if args.command == "train":
        return pipeline.stage_train(cfg, out)
    if args.command == "pseudolabel":
        return pipeline.stage_pseudolabel(cfg, args.checkpoint, out)
    if args.command == "distill":
        return pipeline.stage_distill(cfg, args.pseudo, out, args.init_checkpoint)
    if args.command == "eval":
        return pipeline.stage_eval(cfg, out, args.checkpoint, args.pred_root, args.pred_dir, args.model,
                                   args.sequences)
    if args.command == "synth":
        return pipeline.stage_synth(cfg, args.out)
    return pipeline.stage_stats(cfg, out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        report = run(args)
    except ScribbleLidarError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]
    for key in sorted(report):
        if not isinstance(report[key], (dict, list)):
            print(f"{key} = {report[key]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
