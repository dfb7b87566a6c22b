"""Grid-world Monte Carlo: mean and spread of traversal time for several risk weights."""

from __future__ import annotations

import argparse
from pathlib import Path

from travspeed.gridworld import default_world, load_world, monte_carlo_eval, save_results


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--world", help="grid world JSON (default: built-in three-corridor world)")
    p.add_argument("--betas", default="0,0.25,0.5,0.75,1", help="comma-separated risk weights")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out/gridworld_sweep.csv")
    args = p.parse_args()
    world = load_world(args.world) if args.world else default_world()
    stats = monte_carlo_eval(world, [float(b) for b in args.betas.split(",")], args.trials, seed=args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_results(stats, args.out)
    print(f"{'beta':>5} {'mean':>8} {'std':>8} {'min':>8} {'max':>8}  vegetation cells")
    for s in stats:
        veg = s.plan.classes(world).count(1)
        print(f"{s.beta:5.2f} {s.mean_time:8.3f} {s.std_time:8.3f} {s.min:8.3f} {s.max:8.3f}  {veg}")


if __name__ == "__main__":
    main()
