"""Command-line front end: solve campaigns, emit plot data, list problems.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import (
    ConfigError,
    ExperimentConfig,
    ExperimentError,
    METHODS,
    emit_plotdata,
    run_campaign,
)
from .problems import REGISTRY_IDS, registry_get


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _method_params(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--param expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key] = _parse_value(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qlsolve",
                                     description="Near-term linear-system solver campaigns")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run a seeded campaign for one method")
    solve.add_argument("method", choices=METHODS)
    solve.add_argument("--problem", default="A1", help="registry id or path to a problem JSON")
    solve.add_argument("--noise", default="exact", help="exact | shots:N | depol:N:p")
    solve.add_argument("--optimizer", default=None,
                       help="spsa | bfgs | powell | neldermead | cobyla")
    solve.add_argument("--budget", type=int, default=None)
    solve.add_argument("--restarts", type=int, default=1)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--cost", choices=("local", "global"), default="local")
    solve.add_argument("--out", default="runs")
    solve.add_argument("--jobs", type=int, default=1)
    solve.add_argument("--config", default=None, help="JSON config file; flags override")
    solve.add_argument("--param", action="append", default=[],
                       help="method parameter key=value (repeatable)")
    solve.add_argument("--campaign-id", default=None)

    plot = sub.add_parser("plotdata", help="emit tidy plot CSVs from campaign summaries")
    plot.add_argument("directory")
    plot.add_argument("--out", default=None)
    plot.add_argument("--top-k", type=int, default=None)

    sub.add_parser("list-problems", help="print the benchmark registry")
    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    doc = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
    doc.setdefault("method", args.method)
    problem = args.problem
    if isinstance(problem, str) and problem.endswith(".json"):
        problem = json.loads(Path(problem).read_text())
    overrides = {
        "method": args.method,
        "problem": problem,
        "noise": args.noise,
        "cost": args.cost,
        "restarts": args.restarts,
        "base_seed": args.seed,
        "output_dir": args.out,
        "jobs": args.jobs,
    }
    defaults = ExperimentConfig("vqls")
    for key, value in overrides.items():
        if doc.get(key) is None or value != getattr(defaults, key, None):
            doc[key] = value
    if args.budget is not None:
        doc["budget"] = args.budget
    if args.optimizer is not None:
        doc.setdefault("optimizer", {})
        doc["optimizer"]["kind"] = args.optimizer
    if args.param:
        doc.setdefault("method_params", {})
        doc["method_params"].update(_method_params(args.param))
    if args.campaign_id:
        doc["campaign_id"] = args.campaign_id
    return ExperimentConfig.from_json(doc)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "solve":
            config = _config_from_args(args)
            result = run_campaign(config)
            med = result.summary.get("quartiles", {}).get("median")
            print(f"campaign {result.summary['campaign_id']}: {result.summary['n_runs']} runs, "
                  f"median final cost {med}")
            print(f"wrote {result.directory}/summary.json")
        elif args.command == "plotdata":
            finals, curves = emit_plotdata(args.directory, args.out, args.top_k)
            print(f"wrote {finals} and {curves}")
        elif args.command == "list-problems":
            for pid in REGISTRY_IDS:
                problem = registry_get(pid)
                terms = " + ".join(
                    f"{t.coefficient.real:g}*{t.factors}" for t in problem.terms
                )
                print(f"{pid}: {problem.n_qubits} qubits, A = {terms}, b = H^n|0>")
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
