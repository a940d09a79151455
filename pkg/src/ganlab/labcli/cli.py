"""Command-line entry point: ``ganlab list | run | sweep``.

Exit codes: 0 when every assertion passes, 1 when any fails, 2 on usage
errors (unknown experiment or key, malformed value, unreadable config).
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

from .experiments import UsageError, catalog
from .runner import execute, parse_config_file, parse_overrides

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("experiment")
    p.add_argument("--seed", type=int, action="append", default=[], help="seed to run (repeatable)")
    p.add_argument("--seeds", type=_seed_list, default=None, help="comma-separated seeds")
    p.add_argument("--out", default="runs", help="output directory (default: ./runs)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a parameter (repeatable)")
    p.add_argument("--config", default=None, help="key = value file applied before --set")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--json", action="store_true", help="print the manifest as JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ganlab", description="Run GAN training-dynamics experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    lp = sub.add_parser("list", help="show the experiment catalog")
    lp.add_argument("--json", action="store_true", help="print the catalog as a JSON array")
    _add_run_flags(sub.add_parser("run", help="run one experiment for each seed"))
    sp = sub.add_parser("sweep", help="run one experiment over parameter values x seeds")
    _add_run_flags(sp)
    sp.add_argument("--param", required=True, help="parameter key to sweep")
    sp.add_argument("--values", required=True, help="comma-separated values, or ';'-separated for list values")
    return parser


def _print_catalog(as_json: bool) -> None:
    rows = catalog()
    if as_json:
        print(json.dumps(rows, indent=2))
        return
    width = max(len(r["name"]) for r in rows)
    print(f"{'name':<{width}}  {'runtime':>7}  anchor")
    for r in rows:
        print(f"{r['name']:<{width}}  {r['default_runtime_s']:>6}s  {r['anchor']}")


def _print_manifest(m: dict) -> None:
    for run in m["runs"]:
        tag = f"seed={run['seed']}"
        if "sweep_value" in run:
            tag = f"{m['sweep']['param']}={run['sweep_value']} {tag}"
        if "error" in run:
            print(f"[{m['experiment']} {tag}] ERROR {run['error']}")
        for a in run["assertions"]:
            print(f"[{m['experiment']} {tag}] {'PASS' if a['passed'] else 'FAIL'} {a['name']}")
    print(f"{m['n_assertions'] - m['n_failed']}/{m['n_assertions']} assertions passed in {m['seconds']:.1f}s")


def _split_values(text: str) -> list[str]:
    sep = ";" if ";" in text else ","
    return [v.strip() for v in text.split(sep) if v.strip()]


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors and 0 for --help
        return int(exc.code or 0)
    if args.command == "list":
        _print_catalog(args.json)
        return EXIT_PASS
    try:
        overrides = parse_config_file(args.config) if args.config else {}
        overrides.update(parse_overrides(args.overrides))
        seeds = list(args.seed) + list(args.seeds or [])
        if args.jobs < 1:
            raise UsageError("--jobs must be positive")
        sweep = (args.param, _split_values(args.values)) if args.command == "sweep" else None
        manifest = execute(args.experiment, overrides, seeds, args.out, sweep=sweep, jobs=args.jobs)
    except UsageError as exc:
        print(f"ganlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.json:
        print(json.dumps(manifest, indent=2))
    else:
        _print_manifest(manifest)
    return EXIT_PASS if manifest["passed"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
