"""Compare the compiled and pure-Python simulation kernels.

    python3 benchmarks/bench_kernels.py [--episodes N] [--rollouts N]

Both backends are run on identical inputs; the script also checks that
their outputs agree exactly.
"""

import argparse
import time

import numpy as np

from leakprop import _rng, envsim, evaluation
from leakprop._backend import load


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def bench_episodes(k, layout, n, max_len):
    dx, dy = layout.move_table

    def run():
        steps = 0
        outs = []
        for i in range(n):
            key = _rng.substream(0, 1, i)
            xs, ys, acts, zone = k.simulate_episode(layout.wall_array, layout.zone_array, layout.width,
                                                    layout.height, dx, dy, 200.0, 150.0, key, max_len)
            steps += len(acts)
            outs.append((np.asarray(xs), np.asarray(ys), zone))
        return steps, outs
    return run


def bench_hitting(k, layout, rollouts, max_len):
    grid = evaluation.empty_grid(layout, 20.0)
    starts = np.ascontiguousarray(np.repeat(grid.free_centers(), rollouts, axis=0))
    keys = evaluation.rollout_keys(0, int(grid.free.sum()), rollouts)
    dx, dy = layout.move_table

    def run():
        s, z = k.hitting_times(layout.wall_array, layout.zone_array, layout.width, layout.height,
                               dx, dy, starts, keys, max_len)
        return np.asarray(s), np.asarray(z)
    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--map", default="map1")
    ap.add_argument("--episodes", type=int, default=20)
    ap.add_argument("--rollouts", type=int, default=10)
    ap.add_argument("--max-len", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    layout = envsim.builtin_map(args.map)
    try:
        backends = {"compiled": load("compiled")}
    except ImportError:
        backends = {}
        print("compiled backend not built; timing the python fallback only")
    backends["python"] = load("python")

    print(f"{'kernel':<16}{'backend':<10}{'seconds':>10}{'ns/step':>10}")
    ref = {}
    for name, k in backends.items():
        t, (steps, outs) = _time(bench_episodes(k, layout, args.episodes, args.max_len), args.repeat)
        print(f"{'episodes':<16}{name:<10}{t:>10.4f}{1e9 * t / steps:>10.0f}")
        t2, (hs, hz) = _time(bench_hitting(k, layout, args.rollouts, args.max_len), args.repeat)
        print(f"{'hitting_times':<16}{name:<10}{t2:>10.4f}{1e9 * t2 / hs.sum():>10.0f}")
        ref[name] = (outs, hs, hz)
    if len(ref) == 2:
        a, b = ref["compiled"], ref["python"]
        same = all(np.array_equal(x[0], y[0]) and np.array_equal(x[1], y[1]) and x[2] == y[2]
                   for x, y in zip(a[0], b[0]))
        same = same and np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])
        print(f"outputs identical: {same}")


if __name__ == "__main__":
    main()
