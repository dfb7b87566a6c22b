"""Stochastic grid world: plan on a risk-adjusted single-layer map, then sample realized times.

Each terrain class has a ground-truth realized-speed PMF.  The planner sees
only the risk-adjusted speed of those PMFs and minimizes the summed
traversal time ``cell_size / m`` over entered cells; the Monte Carlo then
draws actual speeds from the same PMFs (uniform within the drawn bin).
"""

from __future__ import annotations

import csv
import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from travspeed.errors import FormatError, ParameterError, UnreachableGoalError
from travspeed.risk import RiskParams, SpeedPmf, risk_adjusted_speed

OBSTACLE = -1
S_FLOOR = 0.05
S_MIN_SIM = 0.05
# UP, DOWN, LEFT, RIGHT; UP is +row (+y), matching the map convention elsewhere
MOVES = ((1, 0), (-1, 0), (0, -1), (0, 1))
RESULTS_HEADER = ("beta", "mean_time", "std_time", "min", "max", "n")

DIRT, VEGETATION = 0, 1


def default_class_pmfs() -> tuple[SpeedPmf, SpeedPmf]:
    """Dirt is fast and tight; vegetation is usually fast but sometimes very slow."""
    dirt = SpeedPmf.from_mass({9: 0.8, 8: 0.2}, n_bins=10, s_max=1.0)
    vegetation = SpeedPmf.from_mass({1: 0.3, 9: 0.7}, n_bins=10, s_max=1.0)
    return dirt, vegetation


@dataclass(frozen=True)
class GridWorld:
    """Terrain ids per cell (``-1`` = impassable), one ground-truth PMF per id.

    Cells are ``(row, col)``; rows grow along +y.
    """

    cells: np.ndarray
    class_pmfs: tuple[SpeedPmf, ...]
    start: tuple[int, int]
    goal: tuple[int, int]
    cell_size: float = 1.0

    def __post_init__(self) -> None:
        cells = np.array(self.cells, dtype=np.int64)
        if cells.ndim != 2 or cells.size == 0:
            raise ParameterError("cells must be a non-empty 2-D array")
        pmfs = tuple(self.class_pmfs)
        if cells.max() >= len(pmfs) or cells.min() < OBSTACLE:
            raise ParameterError(f"cell ids must lie in [-1, {len(pmfs)})")
        start, goal = tuple(int(v) for v in self.start), tuple(int(v) for v in self.goal)
        for name, cell in (("start", start), ("goal", goal)):
            if not (0 <= cell[0] < cells.shape[0] and 0 <= cell[1] < cells.shape[1]):
                raise ParameterError(f"{name} {cell} is outside the {cells.shape} grid")
            if cells[cell] == OBSTACLE:
                raise ParameterError(f"{name} {cell} is an obstacle")
        if start == goal:
            raise ParameterError("start and goal must differ")
        if not self.cell_size > 0:
            raise ParameterError("cell_size must be positive")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "class_pmfs", pmfs)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "goal", goal)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape


def default_world() -> GridWorld:
    """Three walled corridors from start (row 0, left) to goal (row 0, right).

    Row 0 is short but crosses six vegetation cells; row 2 is four cells
    longer with a two-cell vegetation strip; row 4 is eight cells longer and
    all dirt.  ``D`` dirt, ``V`` vegetation, ``X`` impassable; row 0 first.
    """
    rows = [
        "DDVVVVVVDDD",
        "DXXXXXXXXXD",
        "DDDDVVDDDDD",
        "DXXXXXXXXXD",
        "DDDDDDDDDDD",
    ]
    lut = {"D": DIRT, "V": VEGETATION, "X": OBSTACLE}
    cells = np.array([[lut[c] for c in row] for row in rows])
    return GridWorld(cells, default_class_pmfs(), start=(0, 0), goal=(0, 10))


def cell_costs(world: GridWorld, params: RiskParams, s_floor: float = S_FLOOR) -> np.ndarray:
    """Planner cost of entering each cell: ``cell_size / max(m, s_floor)``; inf on obstacles."""
    per_class = np.array(
        [world.cell_size / max(risk_adjusted_speed(p, params), s_floor) for p in world.class_pmfs]
        + [np.inf]
    )
    return per_class[world.cells]


@dataclass(frozen=True)
class GridPlan:
    path: tuple[tuple[int, int], ...]
    cost: float

    def classes(self, world: GridWorld) -> list[int]:
        """Terrain id of every entered cell (start excluded)."""
        return [int(world.cells[c]) for c in self.path[1:]]


def plan_on_costs(costs: np.ndarray, start, goal) -> GridPlan:
    """Uniform-cost search, 4-connected, ties broken first-in first-out."""
    H, W = costs.shape
    best = np.full((H, W), np.inf)
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    best[start] = 0.0
    queue = [(0.0, 0, start)]
    counter = 1
    while queue:
        g, _, cell = heapq.heappop(queue)
        if g > best[cell]:
            continue
        if cell == goal:
            path = [cell]
            while path[-1] != start:
                path.append(parent[path[-1]])
            return GridPlan(tuple(reversed(path)), float(g))
        for dh, dw in MOVES:
            nxt = (cell[0] + dh, cell[1] + dw)
            if not (0 <= nxt[0] < H and 0 <= nxt[1] < W) or not np.isfinite(costs[nxt]):
                continue
            cand = g + costs[nxt]
            if cand < best[nxt]:
                best[nxt] = cand
                parent[nxt] = cell
                heapq.heappush(queue, (cand, counter, nxt))
                counter += 1
    raise UnreachableGoalError(f"goal {goal} cannot be reached from {start}")


def plan_grid(world: GridWorld, params: RiskParams, s_floor: float = S_FLOOR) -> GridPlan:
    """Cheapest path under the single-layer risk-adjusted map."""
    return plan_on_costs(cell_costs(world, params, s_floor), world.start, world.goal)


def path_cost(costs: np.ndarray, path) -> float:
    return float(sum(costs[c] for c in path[1:]))


def sample_traversal_times(
    world: GridWorld, path, n: int, rng: np.random.Generator, s_min: float = S_MIN_SIM
) -> np.ndarray:
    """``n`` independent realized times along ``path``.

    Each entered cell draws a bin from its class PMF, a speed uniformly inside
    that bin, clamps it to at least ``s_min`` and adds ``cell_size / speed``.
    """
    entered = np.array([world.cells[c] for c in path[1:]], dtype=np.int64)
    u = rng.random((n, entered.size))
    v = rng.random((n, entered.size))
    speeds = np.empty((n, entered.size))
    for c in np.unique(entered):
        cols = entered == c
        pmf = world.class_pmfs[c]
        cdf = np.cumsum(pmf.mass)
        bins = np.minimum(np.searchsorted(cdf, u[:, cols], side="right"), pmf.n_bins - 1)
        speeds[:, cols] = (bins + v[:, cols]) * pmf.bin_width
    return (world.cell_size / np.maximum(speeds, s_min)).sum(axis=1)


def simulate_traversal(world: GridWorld, path, rng: np.random.Generator, s_min: float = S_MIN_SIM) -> float:
    return float(sample_traversal_times(world, path, 1, rng, s_min)[0])


@dataclass(frozen=True)
class BetaStats:
    beta: float
    mean_time: float
    std_time: float
    min: float
    max: float
    n: int
    plan: GridPlan = field(compare=False)


def monte_carlo_eval(
    world: GridWorld, betas, n_trials: int, alpha: float = 0.1, seed: int = 0
) -> list[BetaStats]:
    """Plan once per beta, then time ``n_trials`` traversals of that plan.

    Each beta gets its own child seed, spawned in list order from ``seed``.
    The spread is the population standard deviation.
    """
    if n_trials < 1:
        raise ParameterError("n_trials must be >= 1")
    betas = list(betas)
    children = np.random.SeedSequence(seed).spawn(len(betas))
    out = []
    for beta, child in zip(betas, children):
        plan = plan_grid(world, RiskParams(alpha, beta))
        times = sample_traversal_times(world, plan.path, n_trials, np.random.default_rng(child))
        out.append(BetaStats(float(beta), float(times.mean()), float(times.std()),
                             float(times.min()), float(times.max()), n_trials, plan))
    return out


# --------------------------------------------------------------------------- files


def save_world(world: GridWorld, path: str | Path) -> None:
    doc = {
        "H": world.shape[0],
        "W": world.shape[1],
        "cells": world.cells.tolist(),
        "start": list(world.start),
        "goal": list(world.goal),
        "cell_size": world.cell_size,
        "class_pmfs": [{"probs": p.probs.tolist(), "s_max": p.s_max} for p in world.class_pmfs],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_world(path: str | Path) -> GridWorld:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        cells = np.array(doc["cells"], dtype=np.int64)
        if cells.shape != (int(doc["H"]), int(doc["W"])):
            raise FormatError(f"{path}: cells shape {cells.shape} != (H, W) = ({doc['H']}, {doc['W']})")
        pmfs = []
        for i, entry in enumerate(doc["class_pmfs"]):
            try:
                pmfs.append(SpeedPmf(np.array(entry["probs"], dtype=float), float(entry.get("s_max", 1.0))))
            except (ParameterError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}: class_pmfs[{i}]: {exc}") from exc
        return GridWorld(cells, tuple(pmfs), tuple(doc["start"]), tuple(doc["goal"]), float(doc.get("cell_size", 1.0)))
    except KeyError as exc:
        raise FormatError(f"{path}: missing field {exc}") from exc
    except (ParameterError, ValueError, TypeError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: {exc}") from exc


def save_results(stats: list[BetaStats], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULTS_HEADER)
        for s in stats:
            writer.writerow([repr(s.beta), repr(s.mean_time), repr(s.std_time), repr(s.min), repr(s.max), s.n])
