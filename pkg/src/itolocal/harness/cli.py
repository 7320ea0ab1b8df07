"""Command-line interface.

Exit status: 0 when every declared tolerance passes, 1 on a tolerance
failure, 2 on a usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, ExperimentConfig
from .expr import ExpressionError
from .run import WORKERS_ENV, run

SUBCOMMANDS = {
    "check": "formula-check",
    "occupation": "occupation",
    "krylov": "krylov",
    "variation": "variation",
    "mollifier": "mollifier-report",
    "converge": "convergence",
}

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="itolocal", description="Monte Carlo checks of generalized Ito formulae.",
                epilog=f"Set {WORKERS_ENV}=N to spread paths over N worker processes.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, kind in SUBCOMMANDS.items():
        s = sub.add_parser(name, help=f"run a {kind} experiment")
        s.add_argument("--config", metavar="PATH", help="JSON experiment config")
        s.add_argument("--seed", type=int, help="base seed (overrides the config)")
        s.add_argument("--paths", type=int, help="number of Monte Carlo paths")
        s.add_argument("--steps", type=int, help="time steps on [0, horizon]")
        s.add_argument("--builtin", help="built-in function name")
        s.add_argument("--out", metavar="DIR", help="write report.json, metrics.csv, data.csv here")
        s.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="stdout format (default csv)")
        s.add_argument("--figures", action="store_true",
                       help="also render PNG figures into --out (needs matplotlib)")
    return p


def load_config(args) -> ExperimentConfig:
    kind = SUBCOMMANDS[args.command]
    doc: dict = {}
    text = None
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: line {exc.lineno}, column {exc.colno}: "
                              f"{exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: line 1: top level must be an object")
        if doc.get("kind", kind) != kind:
            raise ConfigError(f"config kind {doc['kind']!r} does not match subcommand "
                              f"{args.command!r} ({kind})")
    doc["kind"] = kind
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.paths is not None:
        doc["n_paths"] = args.paths
    if args.steps is not None:
        doc.setdefault("grid", {})["n_steps"] = args.steps
    if args.builtin:
        doc["function"] = {"builtin": args.builtin}
    return ExperimentConfig.from_dict(doc, text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.figures and not args.out:
            raise ConfigError("--figures needs --out")
        report = run(cfg, args.out)
    except (ConfigError, ExpressionError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"itolocal: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    if args.figures:
        from .plotting import render

        render(report, args.out)
    if args.format == "json":
        sys.stdout.write(report.to_json() + "\n")
    else:
        sys.stdout.write(report.metrics_csv())
        if report.data:
            sys.stdout.write("\n" + report.data_csv())
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
