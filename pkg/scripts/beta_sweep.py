"""Closed-loop benchmark: success rate and speed over successes across risk weights."""

from __future__ import annotations

import argparse
import time
from pathlib import Path

from travspeed.model import load_model
from travspeed.simworld import (
    BENCHMARK_BETAS,
    benchmark,
    benchmark_world_spec,
    generate_world,
    load_world_spec,
    reference_model,
    save_benchmark,
    save_trials,
)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--world", help="world spec JSON with pairs (default: built-in benchmark world)")
    p.add_argument("--model", help="model JSON (default: train the reference model)")
    p.add_argument("--betas", default=",".join(f"{b:g}" for b in BENCHMARK_BETAS))
    p.add_argument("--reps", type=int, default=5, help="repetitions per start/goal pair")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="out/beta_sweep")
    args = p.parse_args()
    spec = load_world_spec(args.world) if args.world else benchmark_world_spec()
    model = load_model(args.model) if args.model else reference_model(args.seed)
    t0 = time.perf_counter()
    rows, records = benchmark(generate_world(spec), spec.pairs, [float(b) for b in args.betas.split(",")],
                              args.reps, model, seed=args.seed, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_benchmark(rows, out / "benchmark.csv")
    save_trials(records, out / "trials.csv")
    print(f"{'beta':>5} {'success':>9} {'speed':>7} {'time':>6} {'veg m':>6}")
    for r in rows:
        mine = [rec.result for rec in records if rec.beta == r.beta]
        veg = sum(t.vegetation_distance for t in mine) / len(mine)
        print(f"{r.beta:5.2f} {r.n_success:4d}/{r.n_trials:<4d} {r.mean_speed_success:7.3f} "
              f"{r.mean_time_success:6.2f} {veg:6.2f}")
    print(f"{len(records)} trials in {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
