"""Time the compiled and pure-Python Lemke kernels on the same instances.

    python3 benchmarks/bench_lemke.py [--repeat 3] [--sizes 100 200 400] [--skip-netflow]
"""
import argparse
import statistics
import time

import numpy as np

from dgc import lcp


def psd_instance(rng, d):
    A = rng.normal(size=(d, d // 2))
    z = rng.uniform(0, 1, d) * (rng.uniform(size=d) < 0.5)
    M = A @ A.T + 1e-3 * np.eye(d)
    return lcp.LcpInstance(M, -M @ z + rng.uniform(0, 1, d) * (z == 0))


def netflow_instance():
    from dgc.examples import build_netflow_spec
    from dgc.pipeline import assemble_lcp, build_stage_operators, build_transitions
    from dgc.riccati import solve_riccati_P
    g = build_netflow_spec()
    ops = build_stage_operators(g, solve_riccati_P(g))
    return assemble_lcp(g, ops, build_transitions(ops)).instance


def bench(inst, kernel, repeat):
    times, sol = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        sol = lcp.lemke_solve(inst, kernel=kernel)
        times.append(time.perf_counter() - t0)
    return statistics.median(times), sol


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--sizes", type=int, nargs="*", default=[100, 200, 400])
    ap.add_argument("--skip-netflow", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if "compiled" not in lcp.KERNELS:
        print("compiled kernel not built; only the Python kernel is available")
        return 1
    rng = np.random.default_rng(args.seed)
    cases = [(f"psd d={d}", psd_instance(rng, d)) for d in args.sizes]
    if not args.skip_netflow:
        cases.append(("netflow d=1080", netflow_instance()))
    print(f"{'instance':<16} {'status':<13} {'pivots':>7} {'python s':>10} "
          f"{'compiled s':>11} {'speedup':>8}  same")
    for name, inst in cases:
        tp, sp = bench(inst, "python", args.repeat)
        tc, sc = bench(inst, "compiled", args.repeat)
        same = sp.status == sc.status and sp.pivots == sc.pivots \
            and np.array_equal(sp.basis, sc.basis)
        print(f"{name:<16} {sc.status:<13} {sc.pivots:>7} {tp:>10.4f} {tc:>11.4f} "
              f"{tp / tc:>7.1f}x  {'yes' if same else 'NO'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
