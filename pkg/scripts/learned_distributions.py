"""Collect 180 s of simulated teleoperation, train the network, print the learned PMF per layer."""

from __future__ import annotations

import argparse

import numpy as np

from travspeed.mapgen import layer_speeds
from travspeed.model import TrainConfig, histogram_tv, predict_pmf, train
from travspeed.risk import RiskParams, risk_adjusted_speed
from travspeed.simworld import (
    DIRT,
    N_CLASSES,
    BENCHMARK_BETAS,
    VEGETATION,
    collect_dataset,
    generate_world,
    solid_vegetation_fraction,
    training_world_spec,
)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--duration", type=float, default=180.0)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    world = generate_world(training_world_spec())
    data = collect_dataset(world, args.duration, np.random.default_rng(args.seed))
    model = train(data, TrainConfig(seed=args.seed), n_classes=N_CLASSES)
    counts = np.bincount([s.terrain_class for s in data], minlength=N_CLASSES)
    print(f"{len(data)} samples: dirt {counts[DIRT]}, vegetation {counts[VEGETATION]}; "
          f"solid share of vegetation {solid_vegetation_fraction(world):.3f}")
    print("epoch losses: " + " ".join(f"{v:.4f}" for v in model.history))
    np.set_printoptions(precision=3, suppress=True, linewidth=120)
    for c, name in ((DIRT, "dirt"), (VEGETATION, "vegetation")):
        print(f"\n{name}: PMF over 10 realized-speed bins, then m(alpha=0.1) for beta {BENCHMARK_BETAS}")
        for s in layer_speeds(10, model.s_max):
            pmf = predict_pmf(model, c, float(s))
            m = [risk_adjusted_speed(pmf, RiskParams(0.1, b)) for b in BENCHMARK_BETAS]
            print(f"  cmd {s:4.2f}  {pmf.probs}  " + " ".join(f"{v:4.2f}" for v in m))
    tv = histogram_tv(model, data)
    print(f"\nmax TV to the per-cell histogram: {max(tv.values()):.3f} over {len(tv)} cells")


if __name__ == "__main__":
    main()
