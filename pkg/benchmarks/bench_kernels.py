"""Compiled vs numpy kernels: per-session posteriors, second moments, full sweeps.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from vbivector import kernels
from vbivector.ard import TrainConfig, train_ard
from vbivector.synth import generate, reference_spec

SIZES = [(200, 8, 10), (1000, 64, 20), (2000, 64, 50)]


def _inputs(H, K, n, rng):
    A = rng.normal(size=(K, n, n)) / np.sqrt(n)
    grams = np.matmul(np.swapaxes(A, 1, 2), A)
    N = rng.uniform(0.0, 5.0, size=(H, K))
    proj = rng.normal(size=(H, n))
    return N, grams, proj


def _best(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the numpy kernels are available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'H':>6}{'K':>5}{'n':>5}" + "".join(f"{b:>14}" for b in backends) + f"{'speedup':>10}")
    previous = kernels.BACKEND
    try:
        for H, K, n in SIZES:
            N, grams, proj = _inputs(H, K, n, rng)
            kernels.use_backend(backends[0])
            ybar, cov, _ = kernels.session_posteriors(N, grams, proj)
            for name, call in (
                ("session_posteriors", lambda: kernels.session_posteriors(N, grams, proj)),
                ("second_moments", lambda: kernels.second_moments(N, ybar, cov)),
            ):
                times = []
                for b in backends:
                    kernels.use_backend(b)
                    times.append(_best(call, args.repeat))
                speed = times[0] / times[-1] if len(times) > 1 else 1.0
                print(f"{name:<20}{H:>6}{K:>5}{n:>5}" + "".join(f"{t * 1e3:>12.3f}ms" for t in times) + f"{speed:>9.2f}x")

        stats = generate(reference_spec(seed=1)).stats()
        cfg = TrainConfig(n_y=10, iters=50, seed=1)
        times = []
        for b in backends:
            kernels.use_backend(b)
            times.append(_best(lambda: train_ard(stats, cfg), max(1, args.repeat // 2)))
        speed = times[0] / times[-1] if len(times) > 1 else 1.0
        print(f"{'train_ard x50':<20}{200:>6}{8:>5}{10:>5}" + "".join(f"{t * 1e3:>12.1f}ms" for t in times) + f"{speed:>9.2f}x")
    finally:
        kernels.use_backend(previous)


if __name__ == "__main__":
    main()
