"""``dvhsmooth run <config.json> [--out-dir DIR] [--verbose]`` and ``dvhsmooth validate <config.json>``.

Exit codes: 0 success, 1 runtime or numerical failure (including a run whose
convergence check fails), 2 config or usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import _backend
from .errors import ConfigError, DvhSmoothError
from .experiments import ExperimentConfig, run

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
log = logging.getLogger("dvhsmooth")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dvhsmooth", description="Smoothness diagnostics for dose-volume objectives.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out-dir", default="dvhsmooth-out", help="output directory (default: %(default)s)")
    r.add_argument("--verbose", "-v", action="store_true")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        cfg = ExperimentConfig.load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.kind}, sha256:{cfg.hash[:12]})")
        return EXIT_OK
    log.info("running %s (%s) with the %s backend, %d thread(s)", cfg.name, cfg.kind, _backend.NAME, _backend.num_threads())
    try:
        result = run(cfg, args.out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DvhSmoothError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in result.files:
        log.info("wrote %s", path)
    if not result.ok:
        print(f"{cfg.name}: convergence check failed, see the summary file", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{cfg.name}: ok, {len(result.files)} files in {args.out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
