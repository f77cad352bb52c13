"""Command-line entry point.

Exit codes: 0 success (including inconclusive results, with a warning),
1 usage or config error, 2 budget or contract violation, 3 I/O or parse error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml
from pydantic import ValidationError

from .config import ExperimentConfig, load_config
from .errors import BudgetError, ContractError, TrajectoryParseError, UsageError
from .runner import analyze, dumps, format_sheet, params_sheet, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_BUDGET, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _run_flags(p):
    p.add_argument("config", help="YAML experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--budget-cap", type=int, help="planner simulator calls allowed per trial")
    p.add_argument("--oracle", choices=["vanilla", "grid"])
    p.add_argument("--rho-variant", choices=["proof", "statement"])
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stableplan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _run_flags(sub.add_parser("run", help="run closed-loop trials and write a report"))
    _run_flags(sub.add_parser("tune", help="like run, with the adaptive delta tuner on"))
    pa = sub.add_parser("analyze", help="recompute the report from a run directory")
    pa.add_argument("run_dir")
    pa.add_argument("--theta", type=float)
    pa.add_argument("--rho-variant", choices=["proof", "statement"])
    pa.add_argument("--out", help="where to write the report (default RUN_DIR/analysis.json)")
    pp = sub.add_parser("params", help="print formula-derived parameters for a config")
    pp.add_argument("config")
    pp.add_argument("--oracle", choices=["vanilla", "grid"])
    pp.add_argument("--budget-cap", type=int)
    pp.add_argument("--rho-variant", choices=["proof", "statement"])
    pp.add_argument("--json", action="store_true", help="emit JSON instead of text")
    return parser


def _config_from(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    run = {k: getattr(args, k, None) for k in ("seed", "trials", "horizon", "out", "budget_cap", "workers")}
    return cfg.with_overrides(
        run=run,
        oracle={"kind": getattr(args, "oracle", None)},
        analysis={"rho_variant": getattr(args, "rho_variant", None)},
    )


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr)


def cmd_run(args, adaptive=False) -> int:
    cfg = _config_from(args)
    if adaptive:
        cfg = cfg.with_overrides(adaptive={"enabled": True})
    result = run_experiment(cfg)
    report = result["report"]
    stab = report["stability"]
    print(f"verdict: {stab['verdict']} (theta={stab['theta']}, level={stab['boundedness_level']})")
    print(f"trials: {report['totals']['trials']}, planner samples: {report['totals']['planner_samples']}")
    print(f"report: {result['out'] / 'report.json'}")
    if "adaptive" in report:
        ad = report["adaptive"]
        print(f"max halvings: {ad['max_halvings']}, max near-stability metric: "
              f"{ad['max_near_stability_metric']}")
    for w in report["warnings"]:
        _warn(w)
    if stab["verdict"] == "inconclusive":
        _warn("verdict inconclusive")
    floor_hits = report["totals"]["statuses"].get("delta_floor", 0)
    if floor_hits:
        _warn(f"{floor_hits} trials reached the delta floor")
    for f in result["failures"]:
        print(f"trial {f['trial']} failed: {f['error']}", file=sys.stderr)
    return EXIT_BUDGET if result["failures"] else EXIT_OK


def cmd_analyze(args) -> int:
    report, warnings = analyze(args.run_dir, theta=args.theta, rho_variant=args.rho_variant)
    out = Path(args.out) if args.out else Path(args.run_dir) / "analysis.json"
    out.write_text(dumps(report))
    stab = report["stability"]
    print(f"verdict: {stab['verdict']} (theta={stab['theta']}, level={stab['boundedness_level']})")
    print(f"report: {out}")
    for w in warnings:
        _warn(w)
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = load_config(args.config).with_overrides(
        oracle={"kind": args.oracle}, run={"budget_cap": args.budget_cap},
        analysis={"rho_variant": args.rho_variant})
    sheet = params_sheet(cfg)
    if args.json:
        print(json.dumps(sheet, sort_keys=True, indent=2))
    else:
        print(format_sheet(sheet, color=sys.stdout.isatty()))
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # --help exits 0, parse errors exit 1; hand the code back either way
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "tune":
            return cmd_run(args, adaptive=True)
        if args.command == "analyze":
            return cmd_analyze(args)
        return cmd_params(args)
    except (BudgetError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (TrajectoryParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValidationError, yaml.YAMLError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
