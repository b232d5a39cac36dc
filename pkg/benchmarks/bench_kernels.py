"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--replicates 3610] [--repeat 5]

The workload mirrors a Monte-Carlo validation run: keyed uniforms and noise
draws for R replicates of an 86-age schedule, batch life expectancies for the
perturbed rates, and the O(n) E_x variance sums.  The first numba call
(compilation) is excluded and reported separately.
"""

import argparse
import time

import numpy as np

from demonoise import _kernels as k
from demonoise.ckm import build_ptable
from demonoise.simulate import replicate_keys, synthetic_schedule
from demonoise.uncertainty import NoiseConfig


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--replicates", type=int, default=3610)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    if not k.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    sched = synthetic_schedule(1e5)
    table = build_ptable(NoiseConfig(2.0, 5, 2))
    keys = replicate_keys(args.seed, args.replicates)
    cells = sched.ages.astype(np.uint64)
    u = k.keyed_uniforms_np(keys, cells)
    rows = np.ascontiguousarray(np.broadcast_to(table.row_index(sched.deaths), u.shape))
    deaths = sched.deaths[None, :] + k.sample_noise_np(u, rows, table.cdf, 5)
    deaths[:, -1] = np.maximum(deaths[:, -1], 1)
    rates = np.ascontiguousarray(deaths / sched.avg_population[None, :])
    ell = k.life_table_np(rates[0], 1e5)[0]
    weights = np.random.default_rng(args.seed).uniform(0, 1e6, ell.size)

    cases = [
        ("keyed_uniforms", (keys, cells)),
        ("sample_noise", (u, rows, table.cdf, 5)),
        ("life_expectancy_batch", (rates, 1e5)),
        ("life_table", (rates[0], 1e5)),
        ("ex_variance", (ell, weights)),
    ]
    print(f"R={args.replicates} replicates x {cells.size} ages, best of {args.repeat}")
    print(f"{'kernel':<24}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'jit [ms]':>10}")
    for name, call_args in cases:
        f_np = getattr(k, f"{name}_np")
        f_nb = getattr(k, f"{name}_nb")
        t0 = time.perf_counter()
        f_nb(*call_args)
        jit = time.perf_counter() - t0
        t_np = best_of(lambda: f_np(*call_args), args.repeat)
        t_nb = best_of(lambda: f_nb(*call_args), args.repeat)
        print(f"{name:<24}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}x{jit * 1e3:>10.0f}")


if __name__ == "__main__":
    main()
