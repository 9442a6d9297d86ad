"""Compare the compiled and pure-Python kernel backends.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--rows 2000]

Prints best-of-``repeat`` wall time per call for each kernel and backend,
the speed-up, and the largest absolute difference between the outputs.
"""

import argparse
import time

import numpy as np

from distmle import kernels
from distmle.gmm import GmmParams


def best_time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(rows, rng):
    mu = np.array([0.5, 3.0]) + rng.normal(scale=0.3, size=(rows, 2))
    model = GmmParams(
        [0.2, 0.3, 0.5],
        [[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]],
        [np.eye(2), [[2.0, 0.5], [0.5, 1.0]], 0.5 * np.eye(2)],
    )
    X = rng.normal(scale=5, size=(rows * 10, 2))
    M = rng.normal(scale=20, size=(rows * 10, 8))
    return {
        "ellipse_argmax": lambda be: kernels.ellipse_argmax(mu, 1.0, 5.0, backend=be)[0],
        "mixture_log_density": lambda be: kernels.mixture_log_density(
            X, model.means, model.chols, np.log(model.weights), backend=be),
        "logsumexp_rows": lambda be: kernels.logsumexp_rows(M, backend=be),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--rows", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if not kernels.compiled_available():
        raise SystemExit("compiled kernels are not built; run `python3 setup.py build_ext --inplace`")
    backends = {name: kernels.get_backend(name) for name in ("python", "cython")}
    print(f"{'kernel':22s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speed-up':>9s} {'max |diff|':>11s}")
    for name, fn in cases(args.rows, np.random.default_rng(args.seed)).items():
        t_py, out_py = best_time(lambda: fn(backends["python"]), args.repeat)
        t_cy, out_cy = best_time(lambda: fn(backends["cython"]), args.repeat)
        diff = float(np.max(np.abs(np.asarray(out_py) - np.asarray(out_cy))))
        print(f"{name:22s} {1e3 * t_py:12.3f} {1e3 * t_cy:12.3f} {t_py / t_cy:8.1f}x {diff:11.2e}")


if __name__ == "__main__":
    main()
