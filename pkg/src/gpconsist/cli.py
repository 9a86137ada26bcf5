"""Command-line entry point: ``gpconsist <study> [--config PATH] [--preset NAME] [--seed U64] [--out DIR]``."""
from __future__ import annotations

import argparse
import json
import sys

from .config import PRESETS, ConfigError, load_config
from .experiments import StudyError, run_experiment
from .report import emit_report

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

CLAIMS = {
    "kl-rate": "KL divergence rate h(theta): closed forms for the four models against a brute-force oracle.",
    "equipartition": "Asymptotic equipartition: n^-1 log R_n(theta) + h(theta) -> 0 for a fixed theta.",
    "sieve-mass": "Sieve condition: prior mass outside the sieve G_n decays exponentially in n.",
    "posterior": "Posterior concentration on N_eps = {h <= h(Theta) + eps} and the rate -J(A) for sets away from it.",
    "predictive": "Misspecified predictive convergence: Hellinger distance from the posterior predictive to the best predictor.",
    "bounds": "Concentration inequalities behind the proofs: Hoeffding, Poisson MGF, Hanson-Wright, Bernstein.",
    "report": "Markdown summary of the artifacts recorded in a run manifest.",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpconsist",
        description="Desk-scale simulation checks of posterior consistency for GP-prior regression models.",
        epilog="exit codes: 0 success, 2 configuration error, 3 runtime failure",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, claim in CLAIMS.items():
        p = sub.add_parser(name, help=claim, description=claim, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--out", metavar="DIR", help="run directory (overrides output_dir)")
        if name == "report":
            continue
        p.add_argument("--config", metavar="PATH", help="JSON configuration file")
        p.add_argument("--preset", metavar="NAME", choices=PRESETS, help=f"built-in preset: {', '.join(PRESETS)}")
        p.add_argument("--seed", metavar="U64", type=int, help="master seed (overrides the configuration)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        if not args.out:
            print("error: report needs --out DIR", file=sys.stderr)
            return EXIT_CONFIG
        try:
            emit_report(args.out)
        except FileNotFoundError as exc:
            print(f"error: no manifest in {args.out}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"wrote {args.out}/report.md")
        return EXIT_OK
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.out:
        overrides["output_dir"] = args.out
    try:
        config = load_config(args.config, args.preset, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run_experiment(config, args.command)
    except StudyError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    stage = manifest.stages[args.command]
    print(json.dumps({"study": args.command, "out": str(manifest.out_dir), **stage}, indent=2))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
