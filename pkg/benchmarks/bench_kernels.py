"""Time the numba kernels against their numpy fallbacks on toy-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeats 50]

Each kernel is called once untimed (JIT compile), then timed over ``repeats``
calls; the table shows median microseconds per call and the numba speedup.
"""

import argparse
import time

import numpy as np

from repunlearn import kernels

TOY = np.array([10, 32, 2, 6], dtype=np.int64)


def make_args(name, rng):
    flat = rng.standard_normal(kernels.n_params(TOY))
    x = rng.standard_normal((64, 10))
    if name == "mlp_forward":
        return (x, flat, TOY, 1)
    if name == "mlp_vjp":
        return (x, flat, TOY, 1, rng.standard_normal((64, 6)))
    if name == "mlp_xent_grad":
        return (x, rng.integers(0, 6, 64), flat, TOY, 1)
    if name == "adam_update":
        n = len(flat)
        return (flat, rng.standard_normal(n), np.zeros(n), np.zeros(n), 1,
                1e-3, 0.9, 0.999, 1e-8, 5e-4, False)
    if name == "mean_pairwise_sqdist":
        return (rng.standard_normal((64, 2)), rng.standard_normal((64, 2)))
    if name == "weighted_sqdist":
        return (rng.standard_normal((64, 2)), rng.standard_normal((6, 2)), np.full(6, 250.0))
    if name == "mixture_logpdf":
        return (rng.standard_normal((4000, 4)), rng.standard_normal((8, 4)),
                np.log(np.full(8, 1 / 8)))
    if name == "threshold_accuracy":
        return (rng.random(250), rng.random(250), np.sort(rng.random(500)))
    raise KeyError(name)


def bench(fn, args, repeats):
    fn(*args)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times)) * 1e6


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=50)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':<22}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name in kernels._NAMES:
        impl = kernels.implementations(name)
        t_np = bench(impl["numpy"], make_args(name, np.random.default_rng(0)), args.repeats)
        t_nb = bench(impl["numba"], make_args(name, np.random.default_rng(0)), args.repeats)
        print(f"{name:<22}{t_np:>12.1f}{t_nb:>12.1f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
