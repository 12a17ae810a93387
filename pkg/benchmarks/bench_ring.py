"""Compare the compiled and pure-Python ring kernels, and put them in context.

Run: python3 benchmarks/bench_ring.py [--keys 200000] [--groups 20]
"""
import argparse
import random
import time

from trbft import ringkernel
from trbft.grouping import init_hash_ring
from trbft.sim import SimConfig, run


def best_of(fn, repeat=5):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--keys", type=int, default=200_000)
    ap.add_argument("--groups", type=int, default=20)
    ap.add_argument("--vnodes", type=int, default=100)
    args = ap.parse_args()

    ring = init_hash_ring(args.groups, args.vnodes)
    rng = random.Random(0)
    keys = [rng.getrandbits(32) for _ in range(args.keys)]
    positions, groups = ring.positions, ring.point_groups

    results = {}
    backends = ["python"] + (["cython"] if ringkernel.BACKEND == "cython" else [])
    for b in backends:
        idx = ringkernel.successor_indices(positions, keys, backend=b)
        t_lookup = best_of(lambda: ringkernel.successor_indices(positions, keys, backend=b))
        t_hist = best_of(lambda: ringkernel.group_histogram(groups, idx, args.groups, backend=b))
        results[b] = (t_lookup, t_hist, idx)
        print(f"{b:>7}: lookup {t_lookup * 1e3:8.2f} ms  histogram {t_hist * 1e3:7.2f} ms  ({args.keys} keys)")
    if len(results) == 2:
        assert results["python"][2] == results["cython"][2], "backends disagree"
        print(f"speedup: lookup x{results['python'][0] / results['cython'][0]:.1f}, "
              f"histogram x{results['python'][1] / results['cython'][1]:.1f}")
    else:
        print("compiled kernel not built; only the fallback was measured")

    # one simulated consensus round at N=60, for scale
    t_sim = best_of(lambda: run(SimConfig(n_total=60, k=20, n=3, requests=10)), repeat=3)
    print(f"10-request simulation at N=60, k=20: {t_sim * 1e3:.1f} ms (hashing and dispatch dominate)")


if __name__ == "__main__":
    main()
