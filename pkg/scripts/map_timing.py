"""Time risk-map generation for a 100 x 100 crop at K = 10 layers."""

from __future__ import annotations

import argparse
import time

import numpy as np

from travspeed.mapgen import generate_sdm, naive_risk_map
from travspeed.model import MlpModel
from travspeed.risk import RiskParams, build_risk_map
from travspeed.simworld import generate_world, training_world_spec


def median_ms(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1000.0 * float(np.median(times))


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--size", type=int, default=100)
    p.add_argument("--layers", type=int, default=10)
    p.add_argument("--repeats", type=int, default=50)
    p.add_argument("--naive", action="store_true", help="also time the per-cell reference path (slow)")
    args = p.parse_args()
    world = generate_world(training_world_spec())
    grid = world.grid.window((30.0, 30.0), args.size, args.size)
    model = MlpModel.initialise(2, seed=0)
    params = RiskParams(0.1, 0.5)
    sdm = generate_sdm(grid, model, args.layers)
    t_net = median_ms(lambda: generate_sdm(grid, model, args.layers), args.repeats)
    t_mean = median_ms(lambda: build_risk_map(sdm, RiskParams(0.1, 0.0)), args.repeats)
    t_risk = median_ms(lambda: build_risk_map(sdm, params), args.repeats)
    print(f"{args.size}x{args.size}, K={args.layers}: network {t_net:.3f} ms, mean map {t_mean:.3f} ms, "
          f"risk map {t_risk:.3f} ms, total {t_net + t_risk:.3f} ms")
    if args.naive:
        print(f"per-cell reference path: {median_ms(lambda: naive_risk_map(grid, model, args.layers, params), 1):.0f} ms")


if __name__ == "__main__":
    main()
