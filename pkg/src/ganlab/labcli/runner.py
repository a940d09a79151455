"""Execute experiments per seed, write CSVs and assemble the run manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from .. import __version__
from .experiments import Assertion, Experiment, RunContext, RunResult, UsageError, get


def fmt(v) -> str:
    """CSV cell text: integers verbatim, floats with 17 significant digits."""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int) or (hasattr(v, "dtype") and v.dtype.kind in "iu"):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def config_id(exp: Experiment, params: dict) -> str:
    """Short stable digest of the resolved parameters."""
    text = json.dumps({k: exp.params[k].render(params[k]) for k in sorted(params)}, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:10]


def spec_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def parse_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out: dict[str, str] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def parse_overrides(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _execute(name: str, params: dict, seed: int, n_seeds: int) -> tuple[RunResult | None, str | None, float]:
    exp = get(name)
    t0 = time.perf_counter()
    try:
        result = exp.fn(RunContext(seed, params, n_seeds))
    except UsageError:
        raise
    except Exception as exc:  # recorded in the manifest as a failed run
        return None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0
    names = [a.name for a in result.assertions]
    if names != list(exp.assertions):
        raise RuntimeError(f"{name} produced assertions {names}, declared {list(exp.assertions)}")
    return result, None, time.perf_counter() - t0


def _jsonable_summary(summary: dict) -> dict:
    out = {}
    for k, v in summary.items():
        v = float(v) if not isinstance(v, (int, str)) else v
        out[k] = v if not isinstance(v, float) or math.isfinite(v) else str(v)
    return out


def execute(name: str, overrides: dict[str, str], seeds: Sequence[int] | None, out_dir, *,
            sweep: tuple[str, Sequence[str]] | None = None, jobs: int = 1) -> dict:
    """Run ``name`` for every (sweep value, seed) pair and return the manifest dict.

    The manifest is also written to ``out_dir/manifest.json``.
    """
    exp = get(name)
    seeds = list(exp.default_seeds if not seeds else seeds)
    if len(set(seeds)) != len(seeds):
        raise UsageError("seeds must be distinct")
    base = exp.resolve(overrides)
    if sweep is not None:
        key, values = sweep
        if key not in exp.params:
            raise UsageError(f"unknown sweep parameter {key!r} for {name}; valid keys: {', '.join(sorted(exp.params))}")
        if not values:
            raise UsageError("sweep needs at least one value")
        variants = [(text, exp.resolve({**overrides, key: text})) for text in values]
    else:
        variants = [(None, base)]
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory: {exc}") from None

    tasks = [(value, params, seed) for value, params in variants for seed in seeds]
    t0 = time.perf_counter()
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_execute, name, params, seed, len(seeds)) for _, params, seed in tasks]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_execute(name, params, seed, len(seeds)) for _, params, seed in tasks]

    runs, results_by_variant = [], {}
    for (value, params, seed), (result, error, elapsed) in zip(tasks, outcomes):
        cid = config_id(exp, params)
        run = {"seed": seed, "config_id": cid, "params": {k: exp.params[k].render(v) for k, v in params.items()},
               "seconds": round(elapsed, 3)}
        if sweep is not None:
            run["sweep_value"] = value
        if result is None:
            run["error"] = error
            run["assertions"] = [Assertion(a, False, error).to_dict() for a in exp.assertions]
            run["csv"] = None
        else:
            path = write_csv(out / f"{name}_{cid}_{seed}.csv", result.header, result.rows)
            run["csv"] = str(path)
            run["assertions"] = [a.to_dict() for a in result.assertions]
            run["summary"] = _jsonable_summary(result.summary)
            results_by_variant.setdefault(value, []).append(result)
        run["passed"] = all(a["passed"] for a in run["assertions"])
        runs.append(run)

    manifest = {
        "tool": "ganlab",
        "version": __version__,
        "command": "sweep" if sweep else "run",
        "experiment": name,
        "anchor": exp.anchor,
        "spec_hash": spec_hash({"experiment": name, "overrides": overrides, "seeds": seeds,
                                "sweep": None if sweep is None else [sweep[0], list(sweep[1])]}),
        "seeds": seeds,
        "declared_assertions": list(exp.assertions),
        "runs": runs,
    }
    if exp.pool is not None:
        manifest["pooled"] = {str(v): _jsonable_summary(exp.pool(rs)) for v, rs in results_by_variant.items()
                              if len(rs) == len(seeds)}
    if sweep is not None:
        key = sweep[0]
        summary_keys: list[str] = []
        for run in runs:
            for k in run.get("summary", {}):
                if k not in summary_keys and k != key:
                    summary_keys.append(k)
        rows = [[run["sweep_value"], run["seed"], *(run.get("summary", {}).get(k, math.nan) for k in summary_keys),
                 int(run["passed"])] for run in runs]
        agg = write_csv(out / f"{name}_sweep_{key}.csv", [key, "seed", *summary_keys, "passed"], rows)
        manifest["sweep"] = {"param": key, "values": list(sweep[1]), "aggregate_csv": str(agg)}
    n_total = sum(len(r["assertions"]) for r in runs)
    n_failed = sum(not a["passed"] for r in runs for a in r["assertions"])
    manifest.update({"n_assertions": n_total, "n_failed": n_failed, "passed": n_failed == 0,
                     "seconds": round(time.perf_counter() - t0, 3)})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
