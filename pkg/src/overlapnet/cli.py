"""Command-line entry point.

``overlapnet run --config cfg.json`` executes the full pipeline;
``overlapnet synth --out DIR`` writes a synthetic market plus a matching
config file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import io, pipeline
from .errors import DomainError
from .synthetic import SyntheticSpec, synthetic_market


def _positive_float(text):
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not x > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text!r}")
    return x


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="overlapnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the pipeline from a JSON config")
    run.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    run.add_argument("--seed", type=int, default=None, help="rng seed for optimizer starts")
    run.add_argument("--c", type=_positive_float, default=None, help="market depth scaling constant")
    run.add_argument("--scenario", choices=("moderate", "extreme", "both"), default=None)
    run.add_argument("--skip-optimize", action="store_true", help="analytics and fire sales on the input network only")
    run.add_argument("--out", type=Path, default=None, help="output directory")
    run.add_argument("--n-starts", type=int, default=None, help="optimizer starts")

    syn = sub.add_parser("synth", help="write a synthetic market and config")
    syn.add_argument("--out", required=True, type=Path)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--banks", type=int, default=49)
    syn.add_argument("--assets", type=int, default=36)
    syn.add_argument("--density", type=float, default=0.51)
    return p


def _run(args) -> int:
    overrides = {
        "rng_seed": args.seed,
        "depth_scale": args.c,
        "output_dir": str(args.out.resolve()) if args.out is not None else None,
    }
    if args.scenario is not None:
        overrides["scenarios"] = list(pipeline.SCENARIOS) if args.scenario == "both" else [args.scenario]
    if args.skip_optimize:
        overrides["skip_optimize"] = True
    try:
        cfg = pipeline.RunConfig.from_json(args.config, **overrides)
        if args.n_starts is not None:
            cfg = dataclasses.replace(cfg, optimizer=dataclasses.replace(cfg.optimizer, n_starts=args.n_starts))
    except DomainError as exc:
        print(f"overlapnet: [config] {exc}", file=sys.stderr)
        return pipeline.EXIT_INPUT
    result = pipeline.run_pipeline(cfg)
    if result.exit_code != pipeline.EXIT_OK:
        print(f"overlapnet: {result.error}", file=sys.stderr)
        return result.exit_code
    for f in result.files:
        print(f)
    return pipeline.EXIT_OK


def _synth(args) -> int:
    try:
        sm = synthetic_market(SyntheticSpec(n_assets=args.assets, n_banks=args.banks, density=args.density), seed=args.seed)
        files = io.write_market(io.LoadedMarket(sm.market, sm.returns, sm.covariance), args.out)
        cfg = {
            "holdings": files.holdings.name,
            "banks": files.banks.name,
            "assets": files.assets.name,
            "returns": files.returns.name,
            "covariance": files.covariance.name,
            "output_dir": "out",
            "rng_seed": args.seed,
        }
        (args.out / "config.json").write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
    except DomainError as exc:
        print(f"overlapnet: {exc}", file=sys.stderr)
        return pipeline.EXIT_INPUT
    except OSError as exc:
        print(f"overlapnet: {exc}", file=sys.stderr)
        return pipeline.EXIT_IO
    print(args.out / "config.json")
    return pipeline.EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "run":
        return _run(args)
    return _synth(args)


if __name__ == "__main__":
    sys.exit(main())
