"""Numba kernels against the pure-numpy fallback.

Each path runs in its own interpreter because the switch is read at import.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat):
    fn()  # warm-up, includes compilation on the numba path
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def child(repeat):
    from nashvalue import _jit, kernels
    from nashvalue.game import A, NA, GameGeometry, TypeConfig
    from nashvalue.pmp import kernel_params, solve_bvp

    geom = GameGeometry()
    p = kernel_params(TypeConfig(A, NA), geom, 5.0)
    rng = np.random.default_rng(0)
    nodes = np.column_stack([rng.uniform(15, 20, (10, 1)), rng.uniform(18, 25, (10, 1)),
                             rng.uniform(15, 20, (10, 1)), rng.uniform(18, 25, (10, 1)),
                             rng.normal(size=(10, 8))])
    h = 0.1 / 40
    d = np.linspace(15.0, 70.0, 1201)
    times = np.linspace(0.0, 3.0, 1201)
    x0 = np.array([17.0, 22.0, 17.5, 21.0])

    results = {}
    t, out = _best(lambda: kernels.shoot_segments(nodes, h, 120, p, True), repeat)
    results["shoot_segments"] = (t, float(np.sum(out[0])))
    t, out = _best(lambda: kernels.overlap_durations(d, d[::-1].copy(), times, 31.25, 34.25, 38.75), repeat)
    results["overlap_durations"] = (t, float(np.sum(out)))
    t, out = _best(lambda: solve_bvp(x0, TypeConfig(A, A), geom), max(1, repeat // 2))
    results["solve_bvp"] = (t, float(out.values[0].sum()))
    json.dump({"numba": _jit.USE_NUMBA, "results": results}, sys.stdout)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.child:
        child(args.repeat)
        return
    runs = {}
    for flag in ("0", "1"):
        env = dict(os.environ, NASHVALUE_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                             env=env, check=True, capture_output=True, text=True).stdout
        data = json.loads(out)
        runs["numba" if data["numba"] else "numpy"] = data["results"]
    print(f"{'kernel':<20}{'numba s':>12}{'numpy s':>12}{'speedup':>10}{'rel diff':>12}")
    for name in runs["numpy"]:
        (tn, cn), (tp, cp) = runs["numba"][name], runs["numpy"][name]
        diff = abs(cn - cp) / max(abs(cp), 1e-300)
        print(f"{name:<20}{tn:>12.4g}{tp:>12.4g}{tp / tn:>10.1f}{diff:>12.1e}")


if __name__ == "__main__":
    main()
