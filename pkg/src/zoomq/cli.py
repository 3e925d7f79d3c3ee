"""Command line entry point: ``zoomq run|compare|dims``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import InvalidInput, InvariantViolation, ResourceError
from .harness import ExperimentConfig, UsageError, compare, dims, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT = 0, 2, 3

# CLI flag -> ExperimentConfig field
_RUN_FLAGS = {
    "env": "env", "agent": "agent", "episodes": "episodes", "horizon": "horizon", "delta": "delta",
    "lipschitz": "L", "grid": "grid", "eps": "eps", "seed": "seeds", "max_depth": "max_depth",
    "noise": "noise", "out": "out",
}


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _exponents(text: str) -> list[int]:
    """``4-8`` or ``4,5,6``."""
    try:
        if "-" in text:
            lo, hi = (int(v) for v in text.split("-"))
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad scale list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zoomq", description="Adaptive Q-learning experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an agent on a benchmark for one or more seeds")
    r.add_argument("--config", help="JSON file with ExperimentConfig fields; flags override it")
    r.add_argument("--env")
    r.add_argument("--agent", choices=["adaptive", "uniform"])
    r.add_argument("--episodes", type=int)
    r.add_argument("--horizon", type=int)
    r.add_argument("--delta", type=float)
    r.add_argument("--lipschitz", type=float, help="L used in the bonus (default: the env's hint)")
    r.add_argument("--grid", type=float, help="oracle grid spacing, a power of 1/2")
    r.add_argument("--eps", type=float, help="ball radius of the uniform baseline")
    r.add_argument("--seed", type=_seeds, help="seed or comma-separated seeds")
    r.add_argument("--max-depth", dest="max_depth", type=int)
    r.add_argument("--noise", type=float)
    r.add_argument("--out")
    r.add_argument("--no-svg", action="store_true")
    r.add_argument("--no-check", action="store_true", help="skip per-episode partition checks")

    c = sub.add_parser("compare", help="compare two run directories")
    c.add_argument("--a", required=True)
    c.add_argument("--b", required=True)
    c.add_argument("--out", required=True)

    d = sub.add_parser("dims", help="zooming and covering profiles of a benchmark")
    d.add_argument("--env", required=True)
    d.add_argument("--scales", type=_exponents, default=_exponents("4-8"),
                   help="exponents i of the scales d_max * 2^-i, e.g. 4-8")
    d.add_argument("--grid", type=float, default=2.0 ** -10)
    d.add_argument("--lipschitz", type=float)
    d.add_argument("--horizon", type=int)
    d.add_argument("--out", required=True)
    return p


def config_from_args(args) -> ExperimentConfig:
    base: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError("config", str(e)) from None
    for flag, name in _RUN_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            base[name] = v
    if args.no_svg:
        base["svg"] = False
    if args.no_check:
        base["check_every_episode"] = False
    if isinstance(base.get("seeds"), int):
        base["seeds"] = [base["seeds"]]
    return ExperimentConfig.from_dict(base).validate()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            out = run_experiment(config_from_args(args))
            print(out)
        elif args.command == "compare":
            rep = compare(args.a, args.b, args.out)
            print(json.dumps({k: rep[k] for k in ("env", "K", "regret_difference")}))
        else:
            rep = dims(args.env, args.scales, args.out, grid=args.grid, L=args.lipschitz, horizon=args.horizon)
            print(json.dumps({"zooming": [z["fit"] and z["fit"]["slope"] for z in rep["zooming"]],
                              "covering": rep["covering"]["fit"] and rep["covering"]["fit"]["slope"]}))
    except InvariantViolation as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InvalidInput, ResourceError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
