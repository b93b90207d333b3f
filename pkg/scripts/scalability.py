"""Wall time of the global fit against partitioned fits on growing lattices.

For each lattice size the global model is fitted once, then the disjoint and
k-order models on a grid partition. T1 is the slowest submodel, T2 the sum of
submodel times. When the host has fewer cores than workers, submodel wall
times include time spent waiting for a core, so per-submodel CPU times are
reported next to them.

    python scripts/scalability.py --sizes 30,60,100 --workers 4
"""

from __future__ import annotations

import argparse
import os
import time
from dataclasses import dataclass

from scalemap.engine import FitPlan, fit
from scalemap.graph import grid_partition, lattice_graph
from scalemap.simulation import generate_counts, scenario1


@dataclass
class ScaleConfig:
    sizes: tuple[int, ...] = (30, 60, 100)
    grid: int = 4
    expected: float = 10.0
    workers: int = 4
    k: int = 1
    seed: int = 0


def run(cfg: ScaleConfig):
    print(f"host cores: {os.cpu_count()}, workers: {cfg.workers}")
    print(f"{'areas':>7} {'model':>9} {'wall':>8} {'T1':>8} {'T1 cpu':>8} {'T2':>8} {'global/T1':>10} {'(cpu)':>6}")
    for side in cfg.sizes:
        graph, xy = lattice_graph(side, side, spacing=10.0)
        n = side * side
        hi, lo = [n // 5 + side // 5], [n // 5 + 4 * side // 5]
        data = generate_counts(scenario1(xy, hi, lo), cfg.expected, seed=cfg.seed)
        part = grid_partition(graph, xy, cfg.grid, cfg.grid)

        t0 = time.perf_counter()
        fit(FitPlan("global", workers=1), graph, data)
        t_global = time.perf_counter() - t0
        print(f"{n:>7} {'global':>9} {t_global:8.2f}")
        for plan in (FitPlan("disjoint", workers=cfg.workers),
                     FitPlan("k_order", k=cfg.k, workers=cfg.workers)):
            t0 = time.perf_counter()
            b = fit(plan, graph, data, part)
            wall = time.perf_counter() - t0
            print(f"{n:>7} {plan.label():>9} {wall:8.2f} {b.T1:8.2f} {b.T1_cpu:8.2f} {b.T2:8.2f} "
                  f"{t_global / b.T1:10.1f} {t_global / b.T1_cpu:6.1f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="30,60,100", help="comma-separated lattice side lengths")
    ap.add_argument("--grid", type=int, default=4, help="grid blocks per side")
    ap.add_argument("--expected", type=float, default=10.0)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--k", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    run(ScaleConfig(tuple(int(s) for s in a.sizes.split(",")), a.grid, a.expected, a.workers, a.k, a.seed))


if __name__ == "__main__":
    main()
