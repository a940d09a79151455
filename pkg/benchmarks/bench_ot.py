"""Time the compiled and pure-Python transport kernels on uniform point clouds.

Usage: python benchmarks/bench_ot.py [--sizes 64 256 1024] [--repeats 3] [--json]
"""
import argparse
import json
import time

import numpy as np

from ganlab import _ot
from ganlab.divergence import EmpiricalMeasure, wasserstein_exact


def bench(n: int, backend: str, repeats: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    a = EmpiricalMeasure.uniform(rng.random((n, 2)))
    b = EmpiricalMeasure.uniform(rng.random((n, 2)))
    times, value = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        w, _ = wasserstein_exact(a, b, backend=backend)
        times.append(time.perf_counter() - t0)
        value = float(w)
    return {"n": n, "backend": backend, "seconds": min(times), "w1": value, "pivots": w.meta["pivots"]}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 256, 1024])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--python-max", type=int, default=1024, help="largest n timed on the pure-Python kernel")
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    rows = []
    for n in args.sizes:
        for backend in sorted(_ot.BACKENDS):
            if backend == "python" and n > args.python_max:
                continue
            rows.append(bench(n, backend, args.repeats))
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    print(f"{'n':>6} {'backend':>8} {'seconds':>10} {'pivots':>8} {'W1':>20}")
    for r in rows:
        print(f"{r['n']:>6} {r['backend']:>8} {r['seconds']:>10.4f} {r['pivots']:>8} {r['w1']:>20.12f}")
    by_n = {}
    for r in rows:
        by_n.setdefault(r["n"], {})[r["backend"]] = r["seconds"]
    for n, t in by_n.items():
        if len(t) == 2:
            print(f"n={n}: compiled speed-up x{t['python'] / t['cython']:.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
