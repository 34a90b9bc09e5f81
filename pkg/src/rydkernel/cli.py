"""``rydkernel`` command line: layout, evolve, gram, benchmark, rank.

Exit codes: 0 success, 1 configuration or I/O failure, 2 numerical failure.
The worker count comes from ``RYDKERNEL_WORKERS`` (default 1).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .config import ConfigError, load_config
from .graph_core import IngestionError
from .pipeline import stage_benchmark, stage_evolve, stage_gram, stage_layout, stage_rank
from .propagator import PropagationError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("rydkernel")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML run configuration")
    common.add_argument("--dataset", help="TUDataset directory (overrides the config)")
    common.add_argument("--output", help="run directory (overrides the config)")
    common.add_argument("--mass-table", help="label -> species/mass table")
    common.add_argument("--registers", help="register file; implies registers.source=file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key, e.g. cv.reps=3")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rydkernel", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    layout = sub.add_parser("layout", parents=[common], help="embed graphs as atom registers")
    layout.add_argument("--r-nn", type=float, help="edge length in um (constants.r_nn_um)")
    layout.add_argument("--contrast", type=float, help="minimum edge/non-edge coupling ratio")
    layout.add_argument("--seed", type=int, help="embedding seed (registers.seed)")
    sub.add_parser("evolve", parents=[common], help="simulate the quench for every graph and mode")
    sub.add_parser("gram", parents=[common], help="assemble Gram matrices per kernel, mode and time")
    sub.add_parser("benchmark", parents=[common], help="cross-validate SVMs, write summary tables")
    rank = sub.add_parser("rank", parents=[common], help="Gram rank and F1 versus correlation bins")
    rank.add_argument("--bins", type=int, nargs="+", help="n_bins_c grid")
    return p


def _overrides(args) -> list[str]:
    out = list(args.set)
    if args.dataset:
        out.append(f"dataset={json.dumps(args.dataset)}")
    if args.output:
        out.append(f"output={json.dumps(args.output)}")
    if args.mass_table:
        out.append(f"mass_table={json.dumps(args.mass_table)}")
    if args.registers:
        out += ["registers.source=file", f"registers.path={json.dumps(args.registers)}"]
    for flag, key in (("r_nn", "constants.r_nn_um"), ("contrast", "registers.contrast_threshold"), ("seed", "registers.seed")):
        if getattr(args, flag, None) is not None:
            out.append(f"{key}={getattr(args, flag)}")
    return out


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "layout":
            rep = stage_layout(cfg)
            print(f"layout: {rep['accepted']} registers, {len(rep['rejected'])} rejected -> {cfg.out / 'registers.json'}")
        elif args.command == "evolve":
            rep = stage_evolve(cfg)
            print(f"evolve: {len(rep['records'])} records, {len(rep['qubit_cap_violations'])} over the qubit cap")
        elif args.command == "gram":
            rep = stage_gram(cfg)
            print(f"gram: {rep['grams']} Gram matrices")
        elif args.command == "benchmark":
            rep = stage_benchmark(cfg)
            print(f"benchmark: {rep['rows']} summary rows -> {cfg.out / 'summary.csv'}")
        elif args.command == "rank":
            rep = stage_rank(cfg, args.bins)
            print(f"rank: {rep['rows']} rows -> {cfg.out / 'rank.csv'}")
    except (ConfigError, IngestionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PropagationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
