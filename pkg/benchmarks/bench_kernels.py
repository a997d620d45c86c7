#!/usr/bin/env python3
"""Benchmark the compiled tree kernels against the numpy fallback.

Runs the two hot paths (tree growth, point routing) and one end-to-end
forest-assisted estimation at a few representative sizes, then prints a
table with the speedup.  Verifies bitwise agreement along the way.

Usage: python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import sys
import time

import numpy as np

from rfsurvey._kernels import _pykernels

try:
    from rfsurvey._kernels import _cykernels
except ImportError:
    print("compiled kernels unavailable; build with pip install -e . "
          "--no-build-isolation", file=sys.stderr)
    sys.exit(1)


def timeit(fn, min_time=0.2):
    fn()  # warm up
    n, total = 0, 0.0
    while total < min_time:
        t0 = time.perf_counter()
        fn()
        total += time.perf_counter() - t0
        n += 1
    return total / n


def bench_case(name, m, p, n0, mtry, n_query, trees, quick):
    rng = np.random.default_rng(42)
    X = rng.random((m, p))
    y = rng.normal(size=m)
    c = np.ones(m)
    Xq = rng.random((n_query, p))
    reps = max(1, trees // (4 if quick else 1))

    def grow_all(mod):
        def run():
            for b in range(reps):
                mod.grow(X, y, c, float(n0), mtry, b)
        return run

    t_py = timeit(grow_all(_pykernels))
    t_cy = timeit(grow_all(_cykernels))
    tree_py = _pykernels.grow(X, y, c, float(n0), mtry, 0)
    tree_cy = _cykernels.grow(X, y, c, float(n0), mtry, 0)
    for key in tree_py:
        assert (tree_py[key] == tree_cy[key]).all(), f"parity break: {key}"

    args = (tree_py["feature"], tree_py["threshold"], tree_py["left"],
            tree_py["right"], Xq)
    r_py = timeit(lambda: [_pykernels.route(*args) for _ in range(reps)])
    r_cy = timeit(lambda: [_cykernels.route(*args) for _ in range(reps)])
    assert (_pykernels.route(*args) == _cykernels.route(*args)).all()

    print(f"{name:<28} grow  {1e3 * t_py:9.1f} {1e3 * t_cy:9.1f} "
          f"{t_py / t_cy:7.1f}x")
    print(f"{'':<28} route {1e3 * r_py:9.1f} {1e3 * r_cy:9.1f} "
          f"{r_py / r_cy:7.1f}x")


def bench_estimator(quick):
    import os

    from rfsurvey import EstimatorSpec, McConfig, McPopulation

    pop = McPopulation.from_model(2, 10000, seed=1)
    cfg = McConfig(pop, 250, 4 if quick else 10,
                   (EstimatorSpec("rf", "rf", n_trees=200, min_node_size=5),),
                   master_seed=3)

    def run_backend(force_python):
        # subprocesses inherit the env var, so backend selection is global
        import subprocess
        env = dict(os.environ, RFSURVEY_PURE_PYTHON="1" if force_python else "0")
        code = ("import time; t0=time.perf_counter();"
                "from rfsurvey import EstimatorSpec, McConfig, McPopulation, run_mc;"
                "pop = McPopulation.from_model(2, 10000, seed=1);"
                f"cfg = McConfig(pop, 250, {cfg.replicates},"
                "(EstimatorSpec('rf', 'rf', n_trees=200, min_node_size=5),),"
                "master_seed=3);"
                "s = run_mc(cfg);"
                "print(repr((time.perf_counter()-t0, s.rows[0].mse)))")
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True, check=True)
        import ast
        return ast.literal_eval(out.stdout.strip())

    t_cy, mse_cy = run_backend(False)
    t_py, mse_py = run_backend(True)
    assert mse_cy == mse_py, "backends disagree on estimates"
    print(f"{'forest-assisted replicate':<28} total {1e3 * t_py:9.0f} "
          f"{1e3 * t_cy:9.0f} {t_py / t_cy:7.1f}x   (identical estimates)")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true",
                        help="smaller workloads for a fast smoke run")
    args = parser.parse_args()

    print(f"{'case':<28} {'':<5} {'python ms':>9} {'cython ms':>9} {'speedup':>8}")
    bench_case("small trees (m=158, p=1)", 158, 1, 5, 1, 10000, 200, args.quick)
    bench_case("wide trees (m=158, p=100)", 158, 100, 5, 10, 10000, 200, args.quick)
    bench_case("deep trees (m=630, n0=1)", 630, 6, 1, 2, 20000, 50, args.quick)
    bench_estimator(args.quick)


if __name__ == "__main__":
    main()
