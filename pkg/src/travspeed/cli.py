"""Command-line entry point: ``travspeed <subcommand> [options]``.

Subcommands ``collect``, ``train``, ``genmap``, ``gridworld`` and ``benchmark``
each write their artifacts under ``--out`` together with ``config.json``, the
fully resolved run configuration.  Feeding that file back through
``--config`` reproduces the run.  Values resolve as command-line flag, then
config file, then built-in default.

Exit codes: 0 success, 2 usage or input error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from travspeed import gridworld, mapgen, model, simworld
from travspeed.errors import EmptyCellError, FormatError, ParameterError
from travspeed.mppi import MppiConfig
from travspeed.risk import RiskParams, build_risk_map

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    """Bad flags, config file or input file; maps to exit code 2."""


# --------------------------------------------------------------------------- configs


@dataclass
class CollectOptions:
    """``world``: world spec JSON (default: the built-in training world)."""

    world: str | None = None
    duration: float = 180.0


@dataclass
class TrainOptions:
    """``dataset``: CSV written by ``collect``."""

    dataset: str | None = None
    epochs: int = 10
    learning_rate: float = 0.005
    batch_size: int = 64
    lr_schedule: str = "linear"
    min_samples: int = 200


@dataclass
class GenmapOptions:
    """``grid``: semantic grid JSON (default: a 100 x 100 crop of the training world)."""

    grid: str | None = None
    model: str | None = None
    alpha: float = 0.1
    beta: float = 0.5
    layers: int = 10
    repeats: int = 20


@dataclass
class GridworldOptions:
    """``world``: grid world JSON (default: the built-in three-corridor world)."""

    world: str | None = None
    betas: list[float] = field(default_factory=lambda: [0.0, 0.5, 1.0])
    trials: int = 1000
    alpha: float = 0.1


@dataclass
class BenchmarkOptions:
    """``model`` defaults to one trained on the built-in training world from ``seed``."""

    world: str | None = None
    model: str | None = None
    betas: list[float] = field(default_factory=lambda: list(simworld.BENCHMARK_BETAS))
    trials_per_pair: int = 5
    alpha: float = 0.1
    max_time: float = 40.0
    control_cost_weight: float = 0.0


OPTIONS = {
    "collect": CollectOptions,
    "train": TrainOptions,
    "genmap": GenmapOptions,
    "gridworld": GridworldOptions,
    "benchmark": BenchmarkOptions,
}


@dataclass
class RunConfig:
    """One resolved invocation: shared settings plus the subcommand's options."""

    command: str
    seed: int = 0
    jobs: int = 1
    out: str = "out"
    options: object = None

    def to_dict(self) -> dict:
        return {"command": self.command, "seed": self.seed, "jobs": self.jobs, "out": self.out,
                **asdict(self.options)}

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        doc = dict(doc)
        command = doc.pop("command")
        shared = {k: doc.pop(k) for k in ("seed", "jobs", "out") if k in doc}
        return cls(command, **shared, options=OPTIONS[command](**doc))


# --------------------------------------------------------------------------- parsing


def _beta_list(text: str) -> list[float]:
    try:
        return [float(b) for b in text.split(",") if b.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _show(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, list):
        return ",".join(f"{v:g}" for v in value)
    return str(value)


def _add(p: argparse.ArgumentParser, defaults, flag: str, help: str, **kw) -> None:
    """Add ``flag``; its help names the default held by the ``defaults`` dataclass."""
    name = flag[2:].replace("-", "_")
    if hasattr(defaults, name):
        help = f"{help} (default: {_show(getattr(defaults, name))})"
    p.add_argument(flag, help=help, **kw)


def _shared_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("shared options")
    base = RunConfig("collect")
    _add(g, base, "--seed", "master seed", type=int)
    _add(g, base, "--jobs", "worker processes; results do not depend on it", type=int)
    _add(g, base, "--out", "output directory")
    _add(g, base, "--config", "JSON run configuration; command-line flags take precedence")
    return p


def build_parser() -> argparse.ArgumentParser:
    shared = _shared_parser()
    parser = argparse.ArgumentParser(prog="travspeed", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", parents=[shared],
                       help="drive the simulated operator and log (class, commanded, realized) samples")
    d = CollectOptions()
    _add(p, d, "--world", "world spec JSON; none means the built-in training world")
    _add(p, d, "--duration", "logged seconds", type=float)

    p = sub.add_parser("train", parents=[shared], help="fit the speed-distribution network to a dataset CSV")
    d = TrainOptions()
    _add(p, d, "--dataset", "dataset CSV from 'collect' (required)")
    _add(p, d, "--epochs", "training epochs", type=int)
    _add(p, d, "--learning-rate", "Adam step size", type=float)
    _add(p, d, "--batch-size", "minibatch size", type=int)
    _add(p, d, "--lr-schedule", "step-size schedule", choices=model.LR_SCHEDULES)
    _add(p, d, "--min-samples", "smallest cell reported in the TV table", type=int)

    p = sub.add_parser("genmap", parents=[shared], help="build speed-distribution and risk maps and time them")
    d = GenmapOptions()
    _add(p, d, "--grid", "semantic grid JSON; none means a 100x100 crop of the training world")
    _add(p, d, "--model", "model JSON from 'train' (required)")
    _add(p, d, "--alpha", "CVaR level", type=float)
    _add(p, d, "--beta", "risk weight", type=float)
    _add(p, d, "--layers", "commanded-speed layers K", type=int)
    _add(p, d, "--repeats", "timing repetitions", type=int)

    p = sub.add_parser("gridworld", parents=[shared], help="Monte Carlo traversal times of grid-world plans")
    d = GridworldOptions()
    _add(p, d, "--world", "grid world JSON; none means the built-in three-corridor world")
    _add(p, d, "--betas", "comma-separated risk weights", type=_beta_list)
    _add(p, d, "--trials", "traversals per beta", type=int)
    _add(p, d, "--alpha", "CVaR level", type=float)

    p = sub.add_parser("benchmark", parents=[shared], help="closed-loop success rate and speed across risk weights")
    d = BenchmarkOptions()
    _add(p, d, "--world", "world spec JSON with pairs; none means the built-in benchmark world")
    _add(p, d, "--model", "model JSON; none means train one on the training world from --seed")
    _add(p, d, "--betas", "comma-separated risk weights", type=_beta_list)
    _add(p, d, "--trials-per-pair", "repetitions per start/goal pair", type=int)
    _add(p, d, "--alpha", "CVaR level", type=float)
    _add(p, d, "--max-time", "trial timeout in seconds", type=float)
    cc = p.add_mutually_exclusive_group()
    _add(cc, d, "--control-cost-weight", "weight of the MPPI sampling-correction term", type=float)
    cc.add_argument("--no-control-cost", action="store_true", help="same as --control-cost-weight 0")
    return parser


def resolve(args: argparse.Namespace) -> RunConfig:
    """Merge flags over the config file over defaults."""
    cls = OPTIONS[args.command]
    names = {f.name for f in fields(cls)} | {"seed", "jobs", "out"}
    merged: dict = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
        if doc.get("command", args.command) != args.command:
            raise UsageError(f"{args.config}: written for '{doc['command']}', not '{args.command}'")
        doc.pop("command", None)
        unknown = sorted(set(doc) - names)
        if unknown:
            raise UsageError(f"{args.config}: unknown key(s) {', '.join(unknown)}")
        merged.update(doc)
    if getattr(args, "no_control_cost", False):
        merged["control_cost_weight"] = 0.0
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    try:
        cfg = RunConfig.from_dict({"command": args.command, **merged})
    except TypeError as exc:
        raise UsageError(str(exc)) from exc
    if cfg.jobs < 1:
        raise UsageError(f"--jobs must be >= 1, got {cfg.jobs}")
    return cfg


# --------------------------------------------------------------------------- commands


def _require(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def _load_model(path: str) -> model.MlpModel:
    return model.load_model(_require(path, "--model"))


def _world_spec(path: str | None, default) -> simworld.WorldSpec:
    return simworld.load_world_spec(path) if path else default


def cmd_collect(cfg: RunConfig, out: Path) -> None:
    o: CollectOptions = cfg.options
    if not o.duration > 0:
        raise ParameterError(f"duration must be positive, got {o.duration}")
    world = simworld.generate_world(_world_spec(o.world, simworld.training_world_spec()))
    data = simworld.collect_dataset(world, o.duration, np.random.default_rng(cfg.seed))
    model.save_dataset(data, out / "dataset.csv")
    counts = Counter(s.terrain_class for s in data)
    names = {simworld.DIRT: "dirt", simworld.VEGETATION: "vegetation"}
    print(f"wrote {len(data)} samples to {out / 'dataset.csv'}")
    for c in sorted(counts):
        print(f"  class {c} ({names.get(c, '?')}): {counts[c]}")


def cmd_train(cfg: RunConfig, out: Path) -> None:
    o: TrainOptions = cfg.options
    data = model.load_dataset(_require(o.dataset, "--dataset"))
    tc = model.TrainConfig(epochs=o.epochs, learning_rate=o.learning_rate, batch_size=o.batch_size,
                           lr_schedule=o.lr_schedule, seed=cfg.seed)
    m = model.train(data, tc)
    model.save_model(m, out / "model.json")
    model.save_pmf_table(m, out / "pmf_table.csv")
    for epoch, loss in enumerate(m.history, 1):
        print(f"epoch {epoch:3d}  loss {loss:.5f}")
    print(f"final loss {m.history[-1]:.5f}")
    tv = model.histogram_tv(m, data, min_samples=o.min_samples)
    print(f"TV to histogram, cells with >= {o.min_samples} samples (class, layer): tv")
    for (c, k), v in sorted(tv.items()):
        print(f"  ({c}, {k}): {v:.4f}")
    if tv:
        print(f"max TV {max(tv.values()):.4f} over {len(tv)} cells")


def _median_ms(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1000.0 * float(np.median(times))


def cmd_genmap(cfg: RunConfig, out: Path) -> None:
    o: GenmapOptions = cfg.options
    m = _load_model(o.model)
    if o.repeats < 1:
        raise ParameterError(f"repeats must be >= 1, got {o.repeats}")
    if o.grid:
        grid = mapgen.load_semantic_grid(o.grid)
    else:
        world = simworld.generate_world(simworld.training_world_spec())
        grid = world.grid.window((world.extent[0] / 2, world.extent[1] / 2), 100, 100)
    params = RiskParams(o.alpha, o.beta)
    sdm = mapgen.generate_sdm(grid, m, o.layers)
    risk_map = build_risk_map(sdm, params)
    mapgen.save_sdm(sdm, out / "sdm.json")
    mapgen.save_risk_map(risk_map, out / "risk_map.json")
    mean_params = RiskParams(o.alpha, 0.0)
    t_sdm = _median_ms(lambda: mapgen.generate_sdm(grid, m, o.layers), o.repeats)
    t_mean = _median_ms(lambda: build_risk_map(sdm, mean_params), o.repeats)
    t_risk = _median_ms(lambda: build_risk_map(sdm, params), o.repeats)
    print(f"map {grid.height}x{grid.width}, K={o.layers}, alpha={o.alpha}, beta={o.beta}")
    print(f"  network (C*K evaluations): {t_sdm:.3f} ms")
    print(f"  mean map:                  {t_mean:.3f} ms")
    print(f"  risk map (CVaR + mean):    {t_risk:.3f} ms")
    print(f"  total risk path:           {t_sdm + t_risk:.3f} ms (median of {o.repeats})")
    print(f"wrote {out / 'sdm.json'} and {out / 'risk_map.json'}")


def cmd_gridworld(cfg: RunConfig, out: Path) -> None:
    o: GridworldOptions = cfg.options
    world = gridworld.load_world(o.world) if o.world else gridworld.default_world()
    stats = gridworld.monte_carlo_eval(world, o.betas, o.trials, o.alpha, cfg.seed)
    gridworld.save_results(stats, out / "gridworld.csv")
    for s in stats:
        print(f"beta {s.beta:<5g} mean {s.mean_time:8.3f}  std {s.std_time:8.3f}  path cells {len(s.plan.path) - 1}")
    print(f"wrote {out / 'gridworld.csv'}")


def cmd_benchmark(cfg: RunConfig, out: Path) -> None:
    o: BenchmarkOptions = cfg.options
    spec = _world_spec(o.world, simworld.benchmark_world_spec())
    if not spec.pairs:
        raise ParameterError("benchmark world spec lists no start/goal pairs")
    m = _load_model(o.model) if o.model else simworld.reference_model(cfg.seed)
    world = simworld.generate_world(spec)
    mppi = MppiConfig(control_cost_weight=o.control_cost_weight)
    trial = simworld.TrialConfig(max_time=o.max_time)
    rows, records = simworld.benchmark(world, spec.pairs, o.betas, o.trials_per_pair, m, o.alpha,
                                       mppi, trial, cfg.seed, cfg.jobs)
    simworld.save_benchmark(rows, out / "benchmark.csv")
    simworld.save_trials(records, out / "trials.csv")
    print("beta   success  rate   speed(m/s)  time(s)")
    for r in rows:
        print(f"{r.beta:<6g} {r.n_success:3d}/{r.n_trials:<3d} {r.success_rate:5.2f}  "
              f"{r.mean_speed_success:9.3f}  {r.mean_time_success:7.2f}")
    print(f"wrote {out / 'benchmark.csv'} and {out / 'trials.csv'}")


COMMANDS = {
    "collect": cmd_collect,
    "train": cmd_train,
    "genmap": cmd_genmap,
    "gridworld": cmd_gridworld,
    "benchmark": cmd_benchmark,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[cfg.command](cfg, out)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1) + "\n")
    except (UsageError, ParameterError, FormatError, EmptyCellError, FileNotFoundError,
            IsADirectoryError) as exc:
        print(f"travspeed {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime failure
        print(f"travspeed {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
