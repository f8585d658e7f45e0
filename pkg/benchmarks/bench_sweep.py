"""Time the compiled and numpy chained-equation kernels on the same chains.

    python3 benchmarks/bench_sweep.py --reps 20

Both kernels receive identical pre-drawn noise, so the script also reports
the largest difference between their imputations.
"""

import argparse
import time

import numpy as np

from multistage_mi import _backend, amputation, dgp
from multistage_mi.imputer import ImputationSpec, chained_impute
from multistage_mi.numerics import RngStream

NAMES = ["x1", "y1", "x2", "y2"]


def sample(n, kind, seed):
    root = RngStream(seed)
    full = dgp.generate(dgp.scenario(11), n, root.child(0))
    return amputation.amputate(full, amputation.calibrate(kind), root.child(1))


def time_kernel(d, spec, kernel, reps):
    best = np.inf
    out = None
    for r in range(reps):
        t0 = time.perf_counter()
        out = chained_impute(d, spec, RngStream(r), kernel)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=425)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--reps", type=int, default=10, help="timed repeats; the best is reported")
    p.add_argument("--kind", choices=("monotone", "nonmonotone"), default="nonmonotone")
    args = p.parse_args(argv)

    if _backend.compiled_run_chain is None:
        print("compiled kernel not built; only the numpy kernel is available")
    d = sample(args.n, args.kind, 1)
    targets = [c for c in NAMES if not d.mask[:, NAMES.index(c)].all()]
    print(f"n={args.n} m={args.m} iterations={args.iterations} targets={targets} ({args.kind})")
    print(f"{'method':<6} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8} {'max diff':>10}")
    for method in ("norm", "pmm"):
        spec = ImputationSpec.all_others(targets, NAMES, method, m=args.m, iterations=args.iterations)
        t_py, out_py = time_kernel(d, spec, _backend.python_run_chain, args.reps)
        if _backend.compiled_run_chain is None:
            print(f"{method:<6} {1e3 * t_py:>10.2f} {'-':>10} {'-':>8} {'-':>10}")
            continue
        t_c, out_c = time_kernel(d, spec, _backend.compiled_run_chain, args.reps)
        diff = max(np.max(np.abs(a.to_array() - b.to_array())) for a, b in zip(out_py.members(), out_c.members()))
        print(f"{method:<6} {1e3 * t_py:>10.2f} {1e3 * t_c:>10.2f} {t_py / t_c:>7.1f}x {diff:>10.1e}")


if __name__ == "__main__":
    main()
