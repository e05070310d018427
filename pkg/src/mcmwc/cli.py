"""Command line: ``run``, ``validate`` and ``analyze tail``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
import argparse
import json
import logging
import sys

from . import analysis, experiments
from .config import ConfigError, validate_config

log = logging.getLogger("mcmwc")


def _cmd_run(args):
    cfg, warnings = validate_config(args.config, strict=args.strict)
    for w in warnings:
        log.warning(w)
    path = experiments.run_experiment(cfg, out_dir=args.out, workers=args.workers)
    print(path)
    return 0


def _cmd_validate(args):
    cfg, warnings = validate_config(args.config, strict=True)
    for w in warnings:
        log.warning(w)
    print(json.dumps(cfg.describe(), indent=2, sort_keys=True, default=str))
    return 0


def _cmd_analyze_tail(args):
    k, tail, counts = experiments.read_tail_csv(args.csv)
    fit = analysis.estimate_decay_rate(tail, counts, k)
    print(f"rate={fit.rate:.6g} r2={fit.r2:.4f} k0={fit.k0} k_max={fit.k_max}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="mcmwc", description="Multi-channel moving window code experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (default: config 'output')")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--strict", action="store_true", help="reject unknown config keys")
    r.set_defaults(fn=_cmd_run)

    v = sub.add_parser("validate", help="check a config and print its normalized form")
    v.add_argument("config")
    v.set_defaults(fn=_cmd_validate)

    a = sub.add_parser("analyze", help="post-process emitted files")
    asub = a.add_subparsers(dest="what", required=True)
    t = asub.add_parser("tail", help="fit the decay rate of a tail CSV")
    t.add_argument("csv")
    t.set_defaults(fn=_cmd_analyze_tail)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        log.error("--workers must be >= 1")
        return 1
    try:
        return args.fn(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 1
    except (RuntimeError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
