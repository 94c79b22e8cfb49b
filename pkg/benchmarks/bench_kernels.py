#!/usr/bin/env python3
"""Compare the numba and pure-numpy kernel backends.

Runs the batched matrix exponential and a full metric-flow iteration on
grids matching the package's working sizes and prints per-call timings for
both backends.  Invoke directly:

    python benchmarks/bench_kernels.py [--repeats 50]

The active backend elsewhere in the package follows VORTEXLAB_NUMBA
(0 = force numpy, 1 = require numba, unset = auto).
"""

import argparse
import time

import numpy as np

from vortexlab import _kernels
from vortexlab.flat_bundles import make_flat_pair
from vortexlab.flow_solvers import SolverConfig, solve_vortex
from vortexlab.torus_geometry import make_torus


def _time(fn, repeats):
    fn()  # warm-up (JIT compilation for the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_expm(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for batch, r in [(32, 1), (32, 2), (1024, 2), (1024, 3)]:
        a = rng.standard_normal((batch, r, r)) \
            + 1j * rng.standard_normal((batch, r, r))
        numpy_t = _time(lambda: _kernels._expm_batch_numpy(a), repeats)
        if _kernels.NUMBA_ENABLED:
            flat = np.ascontiguousarray(a)
            numba_t = _time(lambda: _kernels._expm_batch_njit(flat), repeats)
        else:
            numba_t = float("nan")
        rows.append((f"expm {batch}x{r}x{r}", numpy_t, numba_t))
    return rows


def bench_flow_step(repeats):
    rng = np.random.default_rng(1)
    rows = []
    for batch, r in [(32, 2), (1024, 3)]:
        a = rng.standard_normal((batch, r, r)) \
            + 1j * rng.standard_normal((batch, r, r))
        H = a @ np.conj(np.swapaxes(a, -1, -2)) + np.eye(r)
        V = 0.1 * (a + np.conj(np.swapaxes(a, -1, -2)))
        numpy_t = _time(lambda: _kernels._flow_step_numpy(H, V, 0.05), repeats)
        if _kernels.NUMBA_ENABLED:
            numba_t = _time(
                lambda: _kernels._flow_step_njit(H, V, 0.05), repeats)
        else:
            numba_t = float("nan")
        rows.append((f"flow step {batch}x{r}x{r}", numpy_t, numba_t))
    return rows


def bench_end_to_end():
    torus = make_torus(1, [[1.0]], 32)
    pair = make_flat_pair([np.eye(1)], [1.0])
    cfg = SolverConfig()
    t0 = time.perf_counter()
    _, diag = solve_vortex(pair, 2.0, torus, cfg=cfg)
    dt = time.perf_counter() - t0
    return [(f"vortex solve ({diag.iterations} iters, "
             f"{_kernels.backend_name()})", dt, float("nan"))]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    print(f"active backend: {_kernels.backend_name()}")
    rows = bench_expm(args.repeats) + bench_flow_step(args.repeats)
    rows += bench_end_to_end()
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy':>12}  {'numba':>12}")
    for name, numpy_t, numba_t in rows:
        numba_s = f"{numba_t * 1e6:10.1f}us" if numba_t == numba_t else "-"
        print(f"{name:<{width}}  {numpy_t * 1e6:10.1f}us  {numba_s:>12}")


if __name__ == "__main__":
    main()
