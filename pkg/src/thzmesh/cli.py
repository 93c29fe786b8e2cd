"""Command-line entry points: run, analyze-routing, summarize.

Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import csv
import glob
import os
import sys

import numpy as np

from .config import ExperimentConfig, default_config, load_config
from .errors import ConfigurationError, RoutingError, TrainingDivergedError
from .experiment import (CSV_HEADER, analysis_topology, routing_consumption_rows,
                         run_experiment, write_rows_csv)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "slots", None) is not None:
        cfg.slots = args.slots
    unsafe = getattr(args, "unsafe", None)
    if unsafe is not None:
        cfg.agent.safe_explore = unsafe not in (1, 3)
        cfg.agent.safe_init = unsafe not in (2, 3)
    return cfg.validate()


def cmd_run(args) -> int:
    cfg = _load(args)
    report = run_experiment(cfg)
    os.makedirs(args.out, exist_ok=True)
    base = os.path.join(args.out, f"run_seed{cfg.seed}")
    report.write_csv(base + ".csv")
    report.write_metadata(base + ".meta.json")
    print(f"wrote {base}.csv ({len(report.rows)} slots, "
          f"cumulative loss {report.cumulative_loss}, "
          f"converged mean U {report.converged_mean_u})")
    return EXIT_OK


def cmd_analyze_routing(args) -> int:
    cfg = _load(args)
    topo = analysis_topology(cfg)
    rows = routing_consumption_rows(topo, cfg.analysis.gamma0_db, cfg.analysis.iota)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "routing_analysis.csv")
    write_rows_csv(path, rows, ["gamma0_db", "iota", "mean_consumption"])
    print(f"wrote {path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_summarize(args) -> int:
    paths = sorted(glob.glob(os.path.join(args.out, "run_seed*.csv")))
    if not paths:
        raise ConfigurationError(f"no run_seed*.csv files under {args.out}")
    runs = []
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        runs.append(rows)
    n_slots = min(len(r) for r in runs)
    out_rows = []
    for t in range(n_slots):
        row = {"slot": t}
        for col in CSV_HEADER[1:]:
            row[col] = float(np.median([float(run[t][col]) for run in runs]))
        out_rows.append(row)
    path = os.path.join(args.out, "summary.csv")
    write_rows_csv(path, out_rows, CSV_HEADER)
    total_loss = [sum(float(row["lost_packets"]) for row in run) for run in runs]
    print(f"wrote {path} from {len(runs)} runs; "
          f"median cumulative loss {float(np.median(total_loss))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thzmesh",
        description="THz mesh backhaul simulator: routing analysis and "
                    "actor-critic resource-allocation experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one seeded training experiment")
    run.add_argument("--config", help="YAML experiment config")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--slots", type=int, help="override the slot count")
    run.add_argument("--unsafe", type=int, choices=(1, 2, 3),
                     help="ablation: 1 drops safe exploration, 2 drops safe "
                          "initialization, 3 drops both")
    run.add_argument("--out", default="runs", help="output directory")
    run.set_defaults(func=cmd_run)

    ana = sub.add_parser("analyze-routing",
                         help="sweep the distance weight and emit mean consumption")
    ana.add_argument("--config", help="YAML experiment config")
    ana.add_argument("--out", default="runs", help="output directory")
    ana.set_defaults(func=cmd_analyze_routing)

    summ = sub.add_parser("summarize", help="median-aggregate run CSVs in a directory")
    summ.add_argument("--out", default="runs", help="directory holding run_seed*.csv")
    summ.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RoutingError, TrainingDivergedError) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
