"""Command-line front end.

Usage::

    icecontour <command> --config PATH [--seed N] [--jobs N] [--out DIR]
                         [--methods a,b] [--window-sweep A..B]

``command`` is one of the pipeline stages or ``all``. Failures print a JSON
error report on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .pipeline import STAGES, ConfigError, ExperimentConfig, run_all, run_stage

EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_FAILURE = 1


def _window(text):
    try:
        a, b = (int(v) for v in text.split(".."))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None
    return (a, b)


def build_parser():
    p = argparse.ArgumentParser(prog="icecontour", description="Mixture contour sea-ice forecasting")
    p.add_argument("command", choices=[*STAGES, "all"])
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--methods", type=lambda s: tuple(m for m in s.split(",") if m),
                   help="comma-separated methods to evaluate")
    p.add_argument("--window-sweep", type=_window, metavar="A..B",
                   help="also score mixture-weight training windows A..B")
    return p


def _report(command, exc, code, **extra):
    doc = {"status": "error", "command": command, "error": type(exc).__name__,
           "message": str(exc), "exit_code": code, **extra}
    print(json.dumps(doc, indent=2, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ICECONTOUR_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config, out=args.out, seed=args.seed, jobs=args.jobs,
                                    methods=args.methods, window_sweep=args.window_sweep)
    except ConfigError as exc:
        return _report(args.command, exc, EXIT_CONFIG, violations=exc.violations)
    try:
        if args.command == "all":
            run_all(cfg)
        else:
            run_stage(cfg, args.command)
    except ConfigError as exc:
        return _report(args.command, exc, EXIT_CONFIG, violations=exc.violations)
    except FileNotFoundError as exc:
        paths = getattr(exc, "paths", None) or [str(exc.filename or exc)]
        return _report(args.command, exc, EXIT_INPUT, missing=paths)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a report
        logging.getLogger(__name__).debug("failure", exc_info=True)
        return _report(args.command, exc, EXIT_FAILURE)
    print(json.dumps({"status": "ok", "command": args.command, "out": cfg.out}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
