"""Compare the compiled and numpy Newton kernels.

    python benchmarks/bench_kernels.py [--samples 2000] [--repeat 3]

Times a batch of oracle-style power flows (random flex setpoints on the
5-bus single-phase-unit case) and one 221-bus base-case solve per backend.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from pqflex import kernels
from pqflex.netmodel import load_bundled
from pqflex.opf import ScenarioConfig
from pqflex.oracle import draw_setpoints
from pqflex.powerflow import solve_newton, solve_newton_batch


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    case5 = load_bundled("case5_unbalanced_1ph")
    case221 = load_bundled("case221")
    fp, fq = draw_setpoints(case5, ScenarioConfig(), args.samples, seed=0)
    before = kernels.backend()
    rows = []
    ref = None
    try:
        for name in sorted(kernels.BACKENDS):
            kernels.use_backend(name)
            V, _ = solve_newton_batch(case5, fp, fq)
            if ref is None:
                ref = V
            drift = float(np.nanmax(np.abs(V - ref)))
            t_batch = best_of(lambda: solve_newton_batch(case5, fp, fq), args.repeat)
            t_big = best_of(lambda: solve_newton(case221), args.repeat)
            rows.append((name, t_batch, args.samples / t_batch, t_big, drift))
    finally:
        kernels.use_backend(before)

    print(f"{'backend':8s} {'5-bus batch s':>14s} {'flows/s':>10s} {'221-bus s':>10s} {'max |dV|':>10s}")
    for name, tb, rate, tbig, drift in rows:
        print(f"{name:8s} {tb:14.4f} {rate:10.0f} {tbig:10.4f} {drift:10.2e}")
    if len(rows) == 2:
        print(f"speed-up on the batch: {rows[1][1] / rows[0][1]:.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
