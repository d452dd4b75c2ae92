"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Three workloads: one Lindblad matvec, a Chebyshev master-equation run and a
small trajectory ensemble, each at the reference device parameters.
"""

from __future__ import annotations

import argparse
import json
import math
import statistics
import sys
import time

import numpy as np

from transmon_open import kernels
from transmon_open.liouville import DensityMatrix, LindbladGenerator, evolve_master, state_vector
from transmon_open.model import FockSpace, ModelParams
from transmon_open.trajectory import TrajectoryEngine, run_ensemble

TWO_PI = 2 * math.pi


def params(L):
    return ModelParams(L=L, U=230 * TWO_PI, J=20 * TWO_PI, gamma=8e-3 * TWO_PI, kappa=40e-3 * TWO_PI)


def timed(fn, repeat):
    fn()  # warm up
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def workloads():
    p4, p5 = params(4), params(5)
    s4 = FockSpace.build(4, range(0, 5))
    s5 = FockSpace.build(5, range(0, 4))
    g4 = LindbladGenerator.from_params(p4, s4)
    y = np.random.default_rng(0).normal(size=g4.size) + 0j
    rho5 = DensityMatrix.from_state(s5, {(0, 3, 0, 0, 0): 1})
    g5 = LindbladGenerator.from_params(p5, s5)
    s3 = FockSpace.build(4, range(0, 4))
    psi = state_vector(s3, {(0, 3, 0, 0): 1})
    t = np.linspace(0, 6, 61)

    def matvec(be):
        out = np.empty_like(y)
        args = g4.kernel_args()
        return lambda: be.lindblad_apply(y, out, *args)

    def chebyshev(be):
        return lambda: evolve_master(rho5, np.linspace(0, 0.05, 3), generator=g5, method="chebyshev",
                                     store_states=False, backend=be)

    def ensemble(be):
        eng = TrajectoryEngine(p4, s3, be)
        return lambda: run_ensemble(psi, t, p4, 200, 1, space=s3, engine=eng)

    return [
        (f"lindblad matvec (L=4, N<=4, {g4.size} entries)", matvec),
        ("chebyshev master run (L=5, N<=3, 0.05 us)", chebyshev),
        ("200 trajectories (L=4, |3_2>, 6 us)", ensemble),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write results to this file")
    args = ap.parse_args(argv)
    if not kernels.COMPILED_AVAILABLE:
        print("compiled kernels are not built; only the fallback can be timed", file=sys.stderr)
    names = ["python"] + (["compiled"] if kernels.COMPILED_AVAILABLE else [])
    rows = []
    print(f"{'workload':48s} " + " ".join(f"{n:>12s}" for n in names) + "   speedup")
    for label, make in workloads():
        times = {n: timed(make(kernels.get_backend(n)), args.repeat) for n in names}
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        rows.append({"workload": label, **{f"{n}_s": v for n, v in times.items()}, "speedup": speed})
        print(f"{label:48s} " + " ".join(f"{times[n]:12.4g}" for n in names) + f"   {speed:7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
