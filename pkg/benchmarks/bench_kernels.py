"""Time the numba kernels against their pure-numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Kernels: the Gram matrix of the default design (273 points), the oscillator
integrator (256 paths at dt = 0.01) and 10^4 maximin moves on the default
nested design. Each pair is checked for agreement before timing.
"""
import argparse
import time

import numpy as np

from mfpof import covkernel as ck
from mfpof import design as dz
from mfpof import oscillator as osc


def best_of(fn, repeat):
    fn()  # warm-up, includes any compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def gram_case(rng):
    x = rng.uniform(size=(273, 2))
    tl = rng.uniform(size=273)
    args = (1.3, 1 / np.array([0.4, 0.3]), 0.5, 1 / np.array([0.2, 0.6]), True)
    return lambda f: f(x, tl, x, tl, *args)


def integrate_case(rng):
    inputs = [osc.OscillatorInput(w, z, 0.01) for w, z in rng.uniform([0, 0], [30, 1], size=(256, 2))]
    phi, lf = osc._prepare(inputs, "euler", 1.0, osc.SPECTRAL_DENSITY)
    eps = rng.standard_normal((256, 3000, 2))
    return lambda f: f(phi, lf, eps)


def maximin_case(rng):
    raw = dz.generate_nlhs(2, (168, 56, 28, 14, 7), rng)
    it = 10_000
    moves = (rng.integers(0, 2, it), rng.integers(0, 168, it), rng.integers(0, 168, it),
             rng.integers(0, 2, it), rng.uniform(size=it))
    tiers = raw.tiers()
    return lambda f: f(raw.points.copy(), tiers, 168.0, *moves)


CASES = [
    ("gram 273x273", gram_case, ck.cross_cov_numba, ck.cross_cov_numpy),
    ("integrate 256x3000", integrate_case, osc.integrate_numba, osc.integrate_numpy),
    ("maximin 1e4 moves", maximin_case, dz.maximin_numba_kernel, dz.maximin_numpy_kernel),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"{'kernel':<22}{'numba [ms]':>12}{'numpy [ms]':>12}{'speed-up':>10}")
    for name, make, fast, slow in CASES:
        call = make(np.random.default_rng(0))
        if fast is None:
            print(f"{name:<22}{'n/a':>12}{best_of(lambda: call(slow), args.repeat) * 1e3:>12.2f}")
            continue
        np.testing.assert_allclose(call(fast), call(slow), rtol=1e-10)
        tf = best_of(lambda: call(fast), args.repeat)
        ts = best_of(lambda: call(slow), max(1, args.repeat // 2))
        print(f"{name:<22}{tf * 1e3:>12.2f}{ts * 1e3:>12.2f}{ts / tf:>9.1f}x")


if __name__ == "__main__":
    main()
