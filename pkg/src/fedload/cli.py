"""Command-line entry point: run, validate, synth, and report verbs."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataio, evaluate
from .config import build_config, load_config
from .errors import ConfigError, DataError, FedloadError, SchemaError
from .runner import run_experiment

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


def _apply_overrides(args, cfg):
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.federation.seed = args.seed
    if getattr(args, "output_dir", None):
        cfg.output_dir = args.output_dir
    if getattr(args, "lean", False):
        cfg.lean = True
    return cfg


def cmd_run(args) -> int:
    cfg, warnings = load_config(args.config)
    cfg = _apply_overrides(args, cfg)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    manifest = run_experiment(cfg)
    print(f"run complete: {cfg.output_dir} ({manifest['wall_time_sec']:.1f}s)")
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.config:
        cfg, warnings = load_config(args.config)
    else:
        cfg, warnings = build_config({})
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(json.dumps(cfg.resolved(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_synth(args) -> int:
    series = dataio.generate_synthetic(
        args.households, args.days, args.seed,
        noise_amp=args.noise_amp, seasonal_amp=args.seasonal_amp,
    )
    with open(args.output, "w") as fh:
        dataio.serialize_meter_csv(series, fh)
    print(f"wrote {sum(len(s) for s in series)} readings to {args.output}")
    return EXIT_OK


def cmd_report(args) -> int:
    import csv

    with open(args.predictions) as fh:
        records = evaluate.read_predictions_csv(fh)
    cluster_of: dict[str, int] = {}
    type_of: dict[str, str] = {}
    with open(args.households) as fh:
        for row in csv.DictReader(fh):
            cluster_of[row["household_id"]] = int(row["cluster"])
            type_of[row["household_id"]] = row["type"] or evaluate.TYPE_ALL_UPDATES
    rows = evaluate.stratified_report(records, cluster_of, type_of)
    with open(args.output, "w") as fh:
        evaluate.write_metrics_csv(rows, fh)
    print(f"wrote {len(rows)} metric rows to {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedload",
        description="Federated-learning simulator for residential load forecasting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("config", help="TOML or JSON experiment config")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--output-dir", default=None, help="override the output directory")
    p_run.add_argument("--lean", action="store_true", help="skip model checkpoints")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="print the fully resolved config")
    p_val.add_argument("config", nargs="?", default=None)
    p_val.set_defaults(func=cmd_validate)

    p_synth = sub.add_parser("synth", help="emit a synthetic meter CSV")
    p_synth.add_argument("output")
    p_synth.add_argument("--households", type=int, default=40)
    p_synth.add_argument("--days", type=int, default=120)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--noise-amp", type=float, default=0.05)
    p_synth.add_argument("--seasonal-amp", type=float, default=0.25)
    p_synth.set_defaults(func=cmd_synth)

    p_rep = sub.add_parser("report", help="recompute metrics from prediction records")
    p_rep.add_argument("predictions", help="predictions.csv from a previous run")
    p_rep.add_argument("households", help="households.csv from the same run")
    p_rep.add_argument("-o", "--output", default="metrics.csv")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SchemaError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FedloadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
