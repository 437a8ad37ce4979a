"""Command-line entry point: run experiments, list problems, validate configs."""

from __future__ import annotations

import argparse
import json
import sys

from .exceptions import JumpflowError
from .harness import list_problems, run, validate_config


def _load_config(path: str, overrides: dict):
    try:
        text = open(path).read()
    except OSError as exc:
        return None, [{"line": 0, "key": "config", "message": str(exc)}]
    config, errors = validate_config(text)
    if errors:
        return None, errors
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    if config.paths < 1:
        return None, [{"line": 0, "key": "paths", "message": "paths must be >= 1"}]
    if config.steps < 1:
        return None, [{"line": 0, "key": "steps", "message": "steps must be >= 1"}]
    if config.seed < 0:
        return None, [{"line": 0, "key": "seed", "message": "seed must be >= 0"}]
    return config, []


def _print_errors(errors):
    for err in errors:
        loc = f"line {err['line']}: " if err.get("line") else ""
        print(f"error: {loc}{err['key']}: {err['message']}", file=sys.stderr)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="jumpflow",
                                     description="BSDE-with-jumps solver harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--paths", type=int, default=None)
    p_run.add_argument("--steps", type=int, default=None)

    sub.add_parser("list", help="list registered problems")

    p_val = sub.add_parser("validate", help="validate a config file")
    p_val.add_argument("--config", required=True)

    args = parser.parse_args(argv)

    if args.command == "list":
        rows = list_problems()
        width = max(len(r["name"]) for r in rows)
        print(f"{'name':<{width}}  k  d  m  atoms  obstacle  stresses")
        for r in rows:
            print(f"{r['name']:<{width}}  {r['state_dim']}  {r['brownian_dim']}  "
                  f"{r['components']}  {r['atoms']:>5}  {str(r['obstacle']):<8}  {r['stresses']}")
        return 0

    if args.command == "validate":
        config, errors = _load_config(args.config, {})
        if errors:
            _print_errors(errors)
            return 2
        print("config ok:")
        print(json.dumps(config.echo(), indent=2, sort_keys=True))
        return 0

    if args.command == "run":
        overrides = {"seed": args.seed, "paths": args.paths, "steps": args.steps}
        config, errors = _load_config(args.config, overrides)
        if errors:
            _print_errors(errors)
            return 2
        try:
            report = run(config, args.out)
        except JumpflowError as exc:
            print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}), file=sys.stderr)
            return 1
        for row in report["values"]:
            se = row["std_error"]
            tag = "deterministic" if se == "deterministic" else f"+- {se:.3g}"
            print(f"{row['name']} = {row['value']:.6g}  ({tag})")
        print(f"report written to {args.out}/report.json")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
