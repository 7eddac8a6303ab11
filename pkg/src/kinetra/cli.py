"""Command line interface: ``kinetra run <config-path> [--out DIR] [--threads N] [--seed-check]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .driver import execute
from .errors import KinetraError

log = logging.getLogger("kinetra")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kinetra", description="Boundary-coupled transport operators: resolvents, "
                                "spectra, propagators and resolvent decay.")
    sub = p.add_subparsers(dest="action", required=True)
    run = sub.add_parser("run", help="execute the command described by a configuration file")
    run.add_argument("config", help="path to the run configuration")
    run.add_argument("--out", help="output directory (overrides [output] directory)")
    run.add_argument("--threads", type=int, default=1, help="worker threads for independent tasks (default 1)")
    run.add_argument("--seed-check", action="store_true",
                     help="re-run with permuted scheduling and require byte-identical CSV output")
    run.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("kinetra: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
    except KinetraError as exc:
        print(f"kinetra: {exc}", file=sys.stderr)
        return EXIT_IO if getattr(exc, "io", False) else exc.exit_code
    try:
        manifest = execute(cfg, args.out, threads=args.threads, seed_check=args.seed_check)
    except KinetraError as exc:
        print(f"kinetra: {cfg.name} failed: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"kinetra: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    log.info("%s finished in %.2f s, %d artifacts", cfg.name, manifest.timings["total_s"], len(manifest.artifacts))
    if args.seed_check:
        print(f"seed check passed for {cfg.name}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
