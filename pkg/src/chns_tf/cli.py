"""Command line entry point: ``chns-tf run|validate|rates``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_ASSERTION = 4

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chns-tf", description="Time-filtered CHNS solver experiments")
    ap.add_argument("--output-dir", default=None, help="override output.directory")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--threads", type=int, default=None,
                    help="parallel runs in sweeps (default: $CHNS_THREADS or 1)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config", type=Path)
    p = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    p.add_argument("config", type=Path)
    p = sub.add_parser("rates", help="recompute convergence rates from an errors.csv directory")
    p.add_argument("series_dir", type=Path)
    return ap


def _threads(arg) -> int:
    if arg is not None:
        n = arg
    else:
        env = os.environ.get("CHNS_THREADS", "1")
        try:
            n = int(env)
        except ValueError:
            raise SystemExit(f"CHNS_THREADS must be an integer, got {env!r}")
    return max(1, n)


def _load(path: Path, args):
    from chns_tf.config import ConfigError, parse_config

    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc}") from exc
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.output_dir is not None:
        overrides["output"] = {"directory": str(args.output_dir)}
    return parse_config(text, overrides)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = _threads(args.threads)
    # each worker keeps BLAS single-threaded; parallelism is across runs
    for var in _THREAD_VARS:
        os.environ.setdefault(var, "1")

    from chns_tf.config import ConfigError

    if args.command == "rates":
        from chns_tf.harness import rates_from_errors, write_rates

        src = args.series_dir / "errors.csv"
        if not src.exists():
            print(f"error: {src} not found", file=sys.stderr)
            return EXIT_CONFIG
        try:
            table = rates_from_errors(src)
        except (ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        out = write_rates(table, args.series_dir / "rates.csv")
        for var, slope in table.slopes.items():
            succ = ", ".join(f"{r:.4f}" for r in table.rates[var])
            print(f"{var}: successive [{succ}] slope {slope:.4f}")
        print(f"wrote {out}")
        return EXIT_OK

    try:
        cfg = _load(args.config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate":
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK

    from chns_tf.harness import run_experiment

    try:
        record = run_experiment(cfg, threads=threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for a in record.assertions:
        print(f"[{'PASS' if a['passed'] else 'FAIL'}] {a['name']}: {a['detail']}")
    if record.rate_table:
        for var, slope in record.rate_table["slopes"].items():
            print(f"rate {var}: slope {slope:.4f}")
    print(f"status: {record.status} ({record.wall_clock:.1f} s), outputs in {cfg.output['directory']}")
    if record.status == "failed":
        print(record.message, file=sys.stderr)
        return EXIT_SOLVER
    if record.status == "assertion_failed":
        return EXIT_ASSERTION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
