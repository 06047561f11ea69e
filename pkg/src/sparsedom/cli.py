"""Command-line entry point: ``sparsedom <subcommand> [options]``."""
from __future__ import annotations

import argparse
import sys

from .experiments import ConfigError, all_passed, emit_report, load_config, read_report
from .operators import BudgetExceeded
from .scenarios import SCENARIOS, default_config, run_scenario

SUBCOMMAND_SCENARIO = {"lattice-check": "lattice", "kernels": "kernels", "weights": "weights", "sparse": "sparse"}


def _grid(text: str):
    try:
        j, l = (int(t) for t in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("--grid expects J,L") from exc
    return j, l


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="sectioned key=value configuration file")
    common.add_argument("--depth", type=int, help="lattice depth for lattice-check")
    common.add_argument("--grid", type=_grid, help="grid parameters J,L")
    common.add_argument("--seed", type=int, help="suite seed")
    common.add_argument("--out", help="write the CSV report here instead of stdout")
    common.add_argument("--override-budget", action="store_true", help="allow dense quadrature above the cell budget")
    ap = argparse.ArgumentParser(prog="sparsedom", description="Numerical checks for sparse domination and matrix weight classes.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMAND_SCENARIO:
        sub.add_parser(name, parents=[common])
    v = sub.add_parser("verify", parents=[common])
    v.add_argument("scenario", choices=sorted(SCENARIOS))
    r = sub.add_parser("report", parents=[common])
    r.add_argument("inputs", nargs="+", help="CSV reports to merge")
    return ap


def _config(args, scenario):
    cfg = default_config(scenario)
    if args.config:
        cfg = load_config(args.config, scenario, cfg)
    if args.grid:
        cfg.J, cfg.L = args.grid
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            rows = [row for path in args.inputs for row in read_report(path)]
        else:
            scenario = args.scenario if args.command == "verify" else SUBCOMMAND_SCENARIO[args.command]
            cfg = _config(args, scenario)
            kw = {}
            if scenario == "lattice" and args.depth:
                kw["depth"] = args.depth
            if scenario == "sparse":
                kw["override_budget"] = args.override_budget
            rows = run_scenario(cfg, **kw)
    except (ConfigError, BudgetExceeded, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = emit_report(rows, args.out)
    if not args.out:
        sys.stdout.write(text)
    return 0 if all_passed(rows) else 1


if __name__ == "__main__":
    sys.exit(main())
