"""Wall-clock comparison of the numba kernel and the numpy stepper.

    python3 benchmarks/bench_backends.py --t-max 1e4 --repeat 3

Both backends integrate the same planned run; the table reports the best of
``--repeat`` timings (after one warm-up call that triggers compilation) and
the largest state difference over the shared sample times.
"""
import argparse
import time

import numpy as np

from dsmkit import DsmConfig, integrate, make_gallery, plan_run
from dsmkit import _accel


def _time(problem, path, u0, cfg, repeat):
    integrate(problem, path, u0, cfg)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        rec = integrate(problem, path, u0, cfg)
        best = min(best, time.perf_counter() - t0)
    return best, rec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t-max", type=float, default=1e4)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--galleries", default="identity,cubic-monotone,hoelder")
    args = ap.parse_args()
    if not _accel.USE_NUMBA:
        raise SystemExit("numba is disabled (DSM_NUMBA=0 or not installed); nothing to compare")

    print(f"{'gallery':<16} {'steps':>8} {'numba [s]':>10} {'numpy [s]':>10} {'speedup':>8} {'max |du|':>10}")
    for name in args.galleries.split(","):
        problem = make_gallery(name)
        u0 = np.zeros(problem.dimension)
        path, _ = plan_run(problem, u0)
        base = dict(t_max=args.t_max, tau=0.0, compute_w=False)
        t_nb, rec_nb = _time(problem, path, u0, DsmConfig(backend="numba", **base), args.repeat)
        t_np, rec_np = _time(problem, path, u0, DsmConfig(backend="numpy", **base), args.repeat)
        diff = float(np.max(np.abs(rec_nb.u - rec_np.u)))
        print(f"{name:<16} {rec_nb.steps:>8d} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>8.1f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
