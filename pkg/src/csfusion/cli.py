"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 missing input,
4 numerical divergence, 5 data pathology.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys

import yaml

from . import pipeline
from .classifier import SplitError, TrainingDivergenceError
from .config import _coerce, load_config
from .datamodel import ConfigurationError, DimensionError, ValidationError
from .io import LoadError
from .sensing import NoiseDomainError
from .solver import NumericalDivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_DIVERGENCE = 4
EXIT_DATA = 5

logger = logging.getLogger("csfusion")


def _stage(runner, cfg):
    runner(cfg)
    pipeline.write_manifest(cfg)


def cmd_design(cfg: dict) -> None:
    _stage(pipeline.run_design, cfg)


def cmd_simulate(cfg: dict) -> None:
    _stage(pipeline.run_simulate, cfg)


def cmd_fuse(cfg: dict) -> None:
    _stage(pipeline.run_fuse, cfg)


def cmd_classify(cfg: dict) -> None:
    _stage(pipeline.run_classify, cfg)


def _prepare_scene(cfg: dict) -> None:
    if not pipeline.stage_done(cfg["output"], cfg, "scene"):
        pipeline.run_scene(cfg)


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="csfusion", description="Dual coded-aperture feature fusion and classification.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("design", "design filter banks and coded-aperture patterns"),
        ("simulate", "simulate both compressive arms"),
        ("fuse", "estimate fused features from measurements"),
        ("classify", "train the pixel classifier and evaluate"),
        ("pipeline", "run every stage, resuming unchanged ones"),
        ("sweep", "tabulate OA against one configuration key"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("-c", "--config", help="YAML or JSON configuration file")
        p.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key (dotted path), repeatable")
        p.add_argument("-o", "--output", help="output directory (overrides 'output')")
        p.add_argument("--seed", type=int, help="master seed (overrides 'seed')")
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                       help="log progress to stderr")
        if name == "pipeline":
            p.add_argument("--force", action="store_true", help="rerun every stage")
        if name == "sweep":
            p.add_argument("--key", required=True, help="dotted key to vary, e.g. noise.snr_db")
            p.add_argument("--values", required=True, help="comma-separated values")
            p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated master seeds")
            p.add_argument("--table", help="write the table here (TSV) instead of stdout")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.output is not None:
            overrides.append({"output": args.output})
        if args.seed is not None:
            overrides.append({"seed": args.seed})
        if args.command == "sweep":
            # validate against the first swept value, the base may need it
            overrides.append(f"{args.key}={args.values.split(',')[0]}")
        cfg = load_config(args.config, overrides)
        if args.command == "sweep":
            return _sweep(cfg, args)
        if args.command == "pipeline":
            manifest = pipeline.run_pipeline(cfg, force=args.force)
            s = manifest.get("summary", {})
            print(f"OA={s.get('overall_accuracy', float('nan')):.4f} AA={s.get('average_accuracy', float('nan')):.4f} "
                  f"kappa={s.get('kappa', float('nan')):.4f} manifest={cfg['output']}/manifest.json")
            return EXIT_OK
        _prepare_scene(cfg)
        {"design": cmd_design, "simulate": cmd_simulate, "fuse": cmd_fuse, "classify": cmd_classify}[args.command](cfg)
        return EXIT_OK
    except (ConfigurationError, yaml.YAMLError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.MissingInputError, FileNotFoundError) as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalDivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except TrainingDivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (SplitError, LoadError, NoiseDomainError, DimensionError, ValidationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def _sweep(cfg: dict, args) -> int:
    values = [_coerce(yaml.safe_load(v)) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = pipeline.sweep(cfg, args.key, values, seeds)
    fields = list(rows[0])
    out = open(args.table, "w", newline="") if args.table else sys.stdout
    try:
        w = csv.DictWriter(out, fieldnames=fields, delimiter="\t", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.table:
            out.close()
    return EXIT_OK


def main() -> None:
    sys.exit(run())
