"""Command-line entry point.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from marketstates.config import RunConfig, from_mapping, load_config
from marketstates.errors import ConfigError, MarketStatesError
from marketstates.pipeline import STAGES, StageError, run

COMMANDS = {
    "ingest": ["ingest"],
    "correlate": ["correlate"],
    "scan": ["scan"],
    "cluster": ["cluster"],
    "dynamics": ["dynamics"],
    "surrogate": ["surrogate"],
    "plot-data": ["plot-data"],
    "all": list(STAGES),
}


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="marketstates", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run {'every stage' if name == 'all' else 'the ' + name + ' stage'}")
        p.add_argument("-c", "--config", help="TOML run configuration")
        p.add_argument("--prices", help="price CSV (wide or long)")
        p.add_argument("--index", help="index price CSV (single series)")
        p.add_argument("-o", "--output", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--return-kind", choices=["log", "simple"])
        p.add_argument("--gap-policy", choices=["drop", "strict"])
        p.add_argument("--epoch-length", type=int)
        p.add_argument("--shift", type=int)
        p.add_argument("--epsilons", type=_floats, help="comma-separated noise-suppression grid")
        p.add_argument("--k-min", type=int)
        p.add_argument("--k-max", type=int)
        p.add_argument("--restarts", type=int, help="k-means restarts per (k, epsilon) cell")
        p.add_argument("--mds-restarts", type=int)
        p.add_argument("--jobs", type=int, help="worker threads")
        p.add_argument("--force", action="store_true", help="ignore cached stage outputs")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = dict(
        prices=args.prices, index=args.index, output=args.output, seed=args.seed,
        return_kind=args.return_kind, gap_policy=args.gap_policy, epoch_length=args.epoch_length,
        shift=args.shift, epsilons=args.epsilons, k_min=args.k_min, k_max=args.k_max,
        restarts=args.restarts, mds_restarts=args.mds_restarts, jobs=args.jobs,
    )
    if args.config:
        return load_config(args.config).with_overrides(**overrides)
    if args.prices is None or args.seed is None:
        raise ConfigError("without --config both --prices and --seed are required")
    cfg = from_mapping({"input": {"prices": args.prices}, "run": {"seed": args.seed}})
    return cfg.with_overrides(**overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        # a single explicitly requested stage always recomputes
        force = args.force or args.command != "all"
        manifest = run(cfg, COMMANDS[args.command], force=force)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except MarketStatesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(f"{args.command}: ok (config {manifest.config_hash}, {len(manifest.files)} files)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
