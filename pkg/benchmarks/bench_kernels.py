"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from viopose import _kernels_py, kernels


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if kernels.compiled_backend is None:
        raise SystemExit("compiled extension not available; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(0)
    cost = rng.random((300, 300))
    dt = 1.0
    F = np.array([[1, dt, dt * dt / 2], [0, 1, dt], [0, 0, 1]])
    G = np.array([dt * dt / 2, dt, 1.0])
    z = rng.normal(size=(24 * 3, 300, 3))
    env = rng.random(30000)
    cases = {
        "dtw_accumulate 300x300": lambda b: b.dtw_accumulate(cost),
        "kalman_ca 72x300": lambda b: b.kalman_ca(z, F, np.outer(G, G), np.diag([25.0, 4, 4])),
        "pick_peaks n=30000": lambda b: b.pick_peaks(env, 15, 0.8),
    }
    print(f"{'kernel':28s} {'python (s)':>12s} {'cython (s)':>12s} {'speedup':>9s}")
    for name, call in cases.items():
        tp = timeit(lambda: call(_kernels_py), args.repeat)
        tc = timeit(lambda: call(kernels.compiled_backend), args.repeat)
        print(f"{name:28s} {tp:12.5f} {tc:12.5f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
