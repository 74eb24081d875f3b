"""Command-line entry point.

Exit codes: 0 success, 1 user or config error, 2 internal invariant violation.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .errors import InvariantViolation, ShapGuideError

log = logging.getLogger("shapguide")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shapguide", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train the configured models and write reports")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="override the output directory")
    run.add_argument("--workers", type=int, default=None, help="parallel model trainings")

    tune = sub.add_parser("tune", help="grid-search the penalty weights only")
    tune.add_argument("config")
    tune.add_argument("--seed", type=int, default=None)
    tune.add_argument("--out", default=None)
    tune.add_argument("--workers", type=int, default=None)

    ex = sub.add_parser("explain", help="SHAP values and beeswarm summary for a model")
    ex.add_argument("model")
    ex.add_argument("data")
    ex.add_argument("--out", required=True)

    vc = sub.add_parser("variance-compare", help="per-feature SHAP variance of two models")
    vc.add_argument("model_a")
    vc.add_argument("model_b")
    vc.add_argument("data")
    vc.add_argument("--out", required=True)

    enc = sub.add_parser("encode", help="integer-encode non-numeric CSV columns")
    enc.add_argument("src")
    enc.add_argument("dst")
    return p


def _configured(args):
    from .experiment import load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ShapGuideError("--seed must be non-negative")
        cfg = cfg.with_seed(args.seed)
    if args.workers is not None:
        if args.workers < 1:
            raise ShapGuideError("--workers must be >= 1")
        cfg = replace(cfg, workers=args.workers)
    return cfg


def _dispatch(args) -> int:
    from . import experiment

    if args.command == "run":
        cfg = _configured(args)
        out, reports = experiment.run_experiment(cfg)
        dest = experiment.output_dir_for(cfg, args.out)
        out.commit(dest)
        for r in reports:
            log.info("%s", r)
        print(f"wrote {len(out.files)} files to {dest}")
    elif args.command == "tune":
        cfg = _configured(args)
        out, result = experiment.run_tuning(cfg)
        dest = experiment.output_dir_for(cfg, args.out)
        out.commit(dest)
        print(f"best lambda1={result.best.lambda1!r} lambda2={result.best.lambda2!r}; wrote {dest}")
    elif args.command == "explain":
        experiment.explain(args.model, args.data).commit(args.out)
    elif args.command == "variance-compare":
        experiment.variance_compare(args.model_a, args.model_b, args.data).commit(args.out)
    elif args.command == "encode":
        from .dataset import integer_encode_csv

        codes = integer_encode_csv(args.src, args.dst)
        for col, table in codes.items():
            print(f"{col}: {len(table)} codes")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        return _dispatch(args)
    except InvariantViolation as exc:
        print(f"shapguide {stage}: internal invariant violated: {exc}", file=sys.stderr)
        return 2
    except (ShapGuideError, OSError) as exc:
        print(f"shapguide {stage}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
