"""Command-line entry point: ``thermoflow <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

from .config import COMMANDS, spec_from_args
from .drivers import run
from .output import emit_outputs

log = logging.getLogger("thermoflow")

HELP = {
    "conv-study": "manufactured-solution convergence study (EOC table)",
    "cavity": "differentially heated cavity with parameter continuation",
    "channel": "regularised Bingham flow in a cooling channel",
    "bingham-euler": "Bingham / activated-Euler transition channel",
}


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--form", choices=["rayleigh", "grashof", "bingham", "forced"])
    for name in ("Ra", "Pr", "Di", "Theta", "Gr", "Re", "Pe", "Bn", "Br"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--pair", choices=["th", "sv", "p1p1"])
    p.add_argument("--formulation", choices=["three", "four"])
    p.add_argument("--k", type=int, help="velocity polynomial degree")
    p.add_argument("--nref", type=int, help="uniform refinements of the base mesh")
    p.add_argument("--levels", type=int, help="mesh levels of a convergence study")
    p.add_argument("--base", help="base mesh cells, e.g. 8x8")
    p.add_argument("--grading", type=float)
    p.add_argument("--gamma", type=float, help="augmented Lagrangian parameter")
    p.add_argument("--solver", choices=["direct", "al"])
    p.add_argument("--schedule", help="continuation targets, comma separated")
    p.add_argument("--eps-schedule", dest="eps_schedule",
                   help="regularisation targets, comma separated")
    p.add_argument("--model", help="rheology model name")
    p.add_argument("--model-params", dest="model_params", help="model parameters, comma separated")
    p.add_argument("--problem", help="cavity P1|P2|P3 or channel Q1|Q2")
    p.add_argument("--theta-h", dest="theta_h", type=float)
    p.add_argument("--newton-atol", dest="newton_atol", type=float)
    p.add_argument("--newton-max-iter", dest="newton_max_iter", type=int)
    p.add_argument("--krylov-rtol", dest="krylov_rtol", type=float)
    p.add_argument("--quad-degree", dest="quad_degree", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: ./<subcommand>-out)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermoflow",
        description="Non-isothermal flow with implicit rheology: benchmark runner.")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        _add_run_options(sub.add_parser(cmd, help=HELP[cmd], description=HELP[cmd]))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        spec = spec_from_args(args)
    except (OSError, ValueError) as exc:
        print(f"thermoflow: {exc}", file=sys.stderr)
        return 2
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    log.info("running %s", spec.command)
    result = run(spec)
    out = spec.out or f"{spec.command}-out"
    try:
        paths = emit_outputs(result, out)
    except OSError as exc:
        print(f"thermoflow: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result.summary, indent=2, default=str))
    for p in paths:
        log.info("wrote %s", p)
    return 0 if result.summary.get("converged", False) else 1


if __name__ == "__main__":
    sys.exit(main())
