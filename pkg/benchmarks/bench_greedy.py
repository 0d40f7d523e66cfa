"""Time the greedy selection with the compiled kernel and the numpy fallback.

Usage: python benchmarks/bench_greedy.py [--nhat 20] [--repeat 3] [--prune off]
"""
import argparse
import time

import numpy as np

from scentrunc import kernels
from scentrunc.config import demo_config
from scentrunc.scenarios import sample_scenarios
from scentrunc.system import stack_system
from scentrunc.truncation import build_truncation_mapping, greedy_truncate, map_scenarios


def timed(cloud, nhat, repeat):
    best, sel = np.inf, None
    for _ in range(repeat):
        t = time.perf_counter()
        sel = greedy_truncate(cloud, max_points=nhat).selected
        best = min(best, time.perf_counter() - t)
    return best, sel


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nhat", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--prune", choices=("on", "off"), default="on")
    args = ap.parse_args()

    cfg = demo_config()
    stacked = stack_system(cfg.linear_system())
    ss = sample_scenarios(cfg.sampler_spec(), cfg.samples.n_samples, 5, 0, nw=4)
    m = build_truncation_mapping(np.array(cfg.constraints.fx), np.array(cfg.constraints.fu),
                                 stacked, prune=args.prune == "on")
    cloud = map_scenarios(m, ss)
    print(f"cloud {cloud.shape[0]} rows x {cloud.shape[1]} points, nhat={args.nhat}")

    results = {}
    impls = kernels.implementations()
    for name in ("compiled", "python"):
        if name not in impls:
            print(f"{name:>9}: unavailable")
            continue
        kernels.best_candidate = impls[name].best_candidate
        kernels.farthest_from = impls[name].farthest_from
        results[name] = timed(cloud, args.nhat, args.repeat)
        print(f"{name:>9}: {results[name][0] * 1e3:8.1f} ms")
    if len(results) == 2:
        same = results["compiled"][1] == results["python"][1]
        ratio = results["python"][0] / results["compiled"][0]
        print(f"speedup {ratio:.1f}x, identical selection: {same}")


if __name__ == "__main__":
    main()
