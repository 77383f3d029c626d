"""Command-line entry point ``halting-lab``.

Exit codes: 0 success, 1 incomplete run or failed validation, 2 rejected
configuration, 3 more than 5% of sample runs hit the iteration cap.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .harness import KINDS, ConfigError, ExperimentConfig, emit, load_config, resolve_workers, run_experiment

log = logging.getLogger("halting_lab")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_CAPPED = 0, 1, 2, 3
CAPPED_RATE_LIMIT = 0.05


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="halting-lab", description="Halting-time experiments on random SCMs.")
    p.add_argument("experiment", choices=KINDS)
    p.add_argument("--config", help="JSON experiment configuration (optional for 'validate')")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--workers", type=int, help="worker processes (default: config, then $HALTING_LAB_WORKERS, then 1)")
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.add_argument("--format", default="csv,json", help="comma-separated subset of csv,json")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    formats = tuple(f.strip() for f in args.format.split(",") if f.strip())
    try:
        if set(formats) - {"csv", "json"}:
            raise ConfigError(f"--format must be a subset of csv,json, got {args.format!r}")
        if args.config:
            cfg = load_config(args.config)
            if cfg.experiment != args.experiment:
                raise ConfigError(f"config is for experiment {cfg.experiment!r}, not {args.experiment!r}")
        elif args.experiment == "validate":
            cfg = ExperimentConfig("validate", ensembles=("LOE", "BE"), N=(50,), d=(0.5,), num_samples=200)
        else:
            raise ConfigError(f"--config is required for {args.experiment!r}")
        if args.seed is not None:
            cfg = cfg.replace(master_seed=args.seed)
        workers = resolve_workers(args.workers, cfg)
    except ConfigError as exc:
        print(f"halting-lab: configuration rejected: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    log.info("running %s with %d worker(s)", cfg.experiment, workers)
    bundle = run_experiment(cfg, workers)
    out = args.out or cfg.output_dir
    for path in emit(bundle, out, formats):
        log.info("wrote %s", path)

    if not bundle.complete:
        print(f"halting-lab: run incomplete: {bundle.error}", file=sys.stderr)
        return EXIT_FAILED
    if bundle.capped_rate > CAPPED_RATE_LIMIT:
        print(f"halting-lab: {bundle.capped_rate:.1%} of runs hit the iteration cap", file=sys.stderr)
        return EXIT_CAPPED
    if cfg.experiment == "validate" and not bundle.summary["passed"]:
        print("halting-lab: validation failed", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
