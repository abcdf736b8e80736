"""Compiled vs pure-Python batch kernel.

    python benchmarks/bench_kernels.py [--samples 20000] [--repeat 3]

Runs Ranking and Balanced Ranking on the same ranks with each available
backend, checks the outputs agree, and prints the best wall time of each.
"""

import argparse
import time

import numpy as np

from fomatch.engine import OfferTable, default_g, simulate_batch
from fomatch.engine.kernels import BACKENDS
from fomatch.instance import generate_random, generate_upper_triangular


def best_time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=20_000)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    cases = [("random n=10", generate_random(10, 0.4, True, args.seed)),
             ("random n=50", generate_random(50, 0.1, False, args.seed)),
             ("upper-triangular n=20", generate_upper_triangular(20))]
    rng = np.random.default_rng(args.seed)
    print(f"backends: {', '.join(sorted(BACKENDS))}; samples={args.samples}; best of {args.repeat}")
    print(f"{'instance':<24}{'algorithm':<10}" + "".join(f"{b:>12}" for b in sorted(BACKENDS)) + f"{'speedup':>10}")
    for label, inst in cases:
        gy = default_g(rng.random((args.samples, inst.n)))
        offers = OfferTable({(u, v): float(rng.uniform(0, 0.3)) for u in range(inst.n) for v in inst.neighbors(u)},
                            0.03, 1, args.seed)
        for algo, tab in (("ranking", None), ("balanced", offers)):
            times, outs = {}, {}
            for name in sorted(BACKENDS):
                times[name], outs[name] = best_time(lambda: simulate_batch(inst, gy, tab, backend=name), args.repeat)
            if len(outs) > 1:
                a, b = outs.values()
                assert np.array_equal(a.partner, b.partner) and np.allclose(a.alpha, b.alpha, rtol=0, atol=1e-12)
            speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
            print(f"{label:<24}{algo:<10}" + "".join(f"{times[b]:>11.4f}s" for b in sorted(BACKENDS))
                  + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
