"""Compare the compiled kernels with the pure-Python fallback.

Both backends consume the same random stream, so each pair of timings covers
identical work; the script also checks that the outputs agree bit for bit.

    python3 benchmarks/bench_kernels.py [--quick] [--json results.json]
"""
import argparse
import json
import time

import numpy as np

from kaclab import ParticleState
from kaclab._backend import get_kernels
from kaclab.branching import Environment, simulate_trees
from kaclab.cloud import WeightedPointCloud
from kaclab.experiments import maxwellian_init
from kaclab.process import KacProcess
from kaclab.seeding import stream


def bench_process(engine, backend, N, n_events, seed=0):
    V0 = maxwellian_init(N, 3, stream(seed, 0, "init"))
    state = ParticleState(V0, on_sphere=True)
    proc = KacProcess(state, stream(seed, 0, "dynamics"), engine=engine, backend=backend)
    t0 = time.perf_counter()
    proc.advance(max_events=n_events)
    return time.perf_counter() - t0, state.velocities


def bench_trees(backend, n_trees, seed=0):
    cloud = WeightedPointCloud.empirical(maxwellian_init(2048, 3, stream(seed, 0, "environment")))
    env = Environment.constant(cloud, 0.5)
    roots = np.zeros((n_trees, 3))
    t0 = time.perf_counter()
    tb = simulate_trees(roots, np.ones(n_trees), 0.0, 0.5, env, stream(seed, 0, "branching"),
                        backend=backend)
    return time.perf_counter() - t0, tb.leaf_v


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="smaller workloads")
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args()
    get_kernels("compiled")   # fail early if the extension is not built
    scale = 10 if args.quick else 1
    cases = [
        ("gillespie N=512", lambda b: bench_process("gillespie", b, 512, 20_000 // scale)),
        ("thinning N=4096", lambda b: bench_process("thinning", b, 4096, 200_000 // scale)),
        ("branching 2000 trees", lambda b: bench_trees(b, 2000 // scale)),
    ]
    rows = []
    print(f"{'workload':<24}{'compiled [s]':>14}{'python [s]':>14}{'speedup':>10}  identical")
    for name, run in cases:
        tc, oc = run("compiled")
        tp, op = run("python")
        same = bool(np.array_equal(oc, op))
        rows.append({"workload": name, "compiled_s": tc, "python_s": tp, "speedup": tp / tc,
                     "identical": same})
        print(f"{name:<24}{tc:>14.4f}{tp:>14.4f}{tp / tc:>10.1f}  {same}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
