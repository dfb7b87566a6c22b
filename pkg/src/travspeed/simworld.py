"""Continuous 2-D off-road world: terrain, bushes, data collection and closed-loop trials.

The ground is a dirt/vegetation class grid at 0.4 m.  Vegetation carries
circular bushes; a hidden fraction of them are solid and stop the robot, but
the class grid cannot tell them apart from soft ones.  That ambiguity is what
makes vegetation speed outcomes bimodal.

World spec file (JSON): ``seed``, ``extent``, ``resolution``,
``dirt_fraction``, ``patch_scale``, ``roads`` (list of polylines),
``road_width``, ``patches`` (disks ``[x, y, radius, class]`` painted last,
in order), ``bush_density`` (bushes per square meter of vegetation),
``bush_radius`` ``[min, max]``, ``q_solid``, ``response`` (terrain gains and
noise) and optional benchmark ``pairs`` ``[[start, goal], ...]``.  Missing
keys take the defaults below.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from travspeed.errors import FormatError, ParameterError
from travspeed.mapgen import SemanticGrid, generate_risk_map
from travspeed.model import MlpModel, Sample, TrainConfig, train
from travspeed.mppi import MppiConfig, RobotState, dynamics_step, receding_horizon_control
from travspeed.risk import RiskParams, RiskSpeedMap

DIRT, VEGETATION = 0, 1
N_CLASSES = 2
BENCHMARK_HEADER = ("beta", "n_trials", "n_success", "success_rate", "mean_speed_success", "mean_time_success")
TRIALS_HEADER = ("beta", "pair", "rep", "success", "time", "mean_speed", "vegetation_distance", "failure_mode")
BENCHMARK_BETAS = (0.0, 0.15, 0.3, 0.45, 0.6)


@dataclass(frozen=True)
class TerrainResponse:
    """Realized speed = gain * commanded + N(0, noise^2), clamped to ``[0, s_max]``."""

    dirt_gain: float = 0.98
    dirt_noise: float = 0.1
    vegetation_gain: float = 0.98
    vegetation_noise: float = 0.15
    s_max: float = 5.0

    def __post_init__(self) -> None:
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise ParameterError(f"response.{f.name} must be non-negative")
        if self.s_max <= 0:
            raise ParameterError("response.s_max must be positive")

    def gain_noise(self, terrain_class) -> tuple[np.ndarray, np.ndarray]:
        veg = np.asarray(terrain_class) == VEGETATION
        return (np.where(veg, self.vegetation_gain, self.dirt_gain),
                np.where(veg, self.vegetation_noise, self.dirt_noise))


@dataclass(frozen=True)
class WorldSpec:
    seed: int = 0
    extent: tuple[float, float] = (60.0, 60.0)
    resolution: float = 0.4
    dirt_fraction: float = 0.3
    patch_scale: float = 4.0
    roads: tuple = ()
    road_width: float = 4.0
    patches: tuple = ()
    bush_density: float = 0.6
    bush_radius: tuple[float, float] = (0.3, 0.6)
    q_solid: float = 0.25
    response: TerrainResponse = field(default_factory=TerrainResponse)
    pairs: tuple = ()

    def __post_init__(self) -> None:
        extent = tuple(float(v) for v in self.extent)
        if len(extent) != 2 or min(extent) <= 0:
            raise ParameterError(f"extent must be two positive lengths, got {self.extent}")
        if self.resolution <= 0 or self.patch_scale <= 0 or self.road_width < 0:
            raise ParameterError("resolution and patch_scale must be positive, road_width non-negative")
        if not 0 <= self.dirt_fraction <= 1 or not 0 <= self.q_solid <= 1:
            raise ParameterError("dirt_fraction and q_solid must lie in [0, 1]")
        r0, r1 = (float(v) for v in self.bush_radius)
        if not 0 < r0 <= r1 or self.bush_density < 0:
            raise ParameterError("bush_radius needs 0 < min <= max and bush_density >= 0")
        roads = tuple(tuple((float(x), float(y)) for x, y in line) for line in self.roads)
        patches = tuple((float(x), float(y), float(r), int(c)) for x, y, r, c in self.patches)
        if any(c not in (DIRT, VEGETATION) or r <= 0 for *_, r, c in patches):
            raise ParameterError("patches need a positive radius and a class of 0 (dirt) or 1 (vegetation)")
        pairs = tuple((tuple(map(float, s)), tuple(map(float, g))) for s, g in self.pairs)
        for s, g in pairs:
            for p in (s, g):
                if not (0 <= p[0] <= extent[0] and 0 <= p[1] <= extent[1]):
                    raise ParameterError(f"pair point {p} lies outside the extent")
        response = self.response if isinstance(self.response, TerrainResponse) else TerrainResponse(**self.response)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "bush_radius", (r0, r1))
        object.__setattr__(self, "roads", roads)
        object.__setattr__(self, "patches", patches)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "response", response)


@dataclass(frozen=True)
class SimWorld:
    """Generated terrain: class grid plus bush disks (``solid`` is hidden from the grid)."""

    spec: WorldSpec
    grid: SemanticGrid
    bush_xy: np.ndarray
    bush_r: np.ndarray
    bush_solid: np.ndarray

    @property
    def extent(self) -> tuple[float, float]:
        return self.spec.extent

    @property
    def response(self) -> TerrainResponse:
        return self.spec.response

    def inside(self, x: float, y: float) -> bool:
        return 0.0 <= x < self.extent[0] and 0.0 <= y < self.extent[1]

    def class_at(self, x, y) -> np.ndarray:
        """Terrain class under each point (points must lie inside the extent)."""
        res = self.grid.resolution
        h = np.clip(np.floor(np.asarray(y) / res).astype(np.int64), 0, self.grid.height - 1)
        w = np.clip(np.floor(np.asarray(x) / res).astype(np.int64), 0, self.grid.width - 1)
        return self.grid.cells[h, w]

    def solid_bush_at(self, x: float, y: float) -> int:
        """Index of a solid bush containing the point, or ``-1``."""
        d2 = (self.bush_xy[:, 0] - x) ** 2 + (self.bush_xy[:, 1] - y) ** 2
        hit = np.flatnonzero(self.bush_solid & (d2 < self.bush_r**2))
        return int(hit[0]) if hit.size else -1

    def in_solid_bush(self, x, y) -> np.ndarray:
        """Vectorized membership test for many points."""
        x, y = np.atleast_1d(np.asarray(x, dtype=float)), np.atleast_1d(np.asarray(y, dtype=float))
        out = np.zeros(x.shape, dtype=bool)
        for (bx, by), r in zip(self.bush_xy[self.bush_solid], self.bush_r[self.bush_solid]):
            out |= (x - bx) ** 2 + (y - by) ** 2 < r * r
        return out


def _smooth_field(rng: np.random.Generator, shape: tuple[int, int], sigma_cells: float) -> np.ndarray:
    return ndimage.gaussian_filter(rng.standard_normal(shape), sigma_cells, mode="wrap")


def _segment_distance(px: np.ndarray, py: np.ndarray, a, b) -> np.ndarray:
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    L2 = dx * dx + dy * dy
    t = np.zeros_like(px) if L2 == 0 else np.clip(((px - ax) * dx + (py - ay) * dy) / L2, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def generate_world(spec: WorldSpec) -> SimWorld:
    """Class grid from a thresholded smooth random field plus roads, then bushes on vegetation.

    Dirt patches cover ``dirt_fraction`` of the field; roads and then the
    listed disk patches are painted on top.  Bush count is Poisson with mean
    ``bush_density`` times the vegetation area; a candidate is kept only if
    its whole disk sits on vegetation.  Each kept bush is solid with probability ``q_solid``.
    """
    rng = np.random.default_rng(spec.seed)
    res = spec.resolution
    H, W = int(round(spec.extent[1] / res)), int(round(spec.extent[0] / res))
    field_ = _smooth_field(rng, (H, W), spec.patch_scale / res)
    if spec.dirt_fraction <= 0:
        dirt = np.zeros((H, W), dtype=bool)
    elif spec.dirt_fraction >= 1:
        dirt = np.ones((H, W), dtype=bool)
    else:
        dirt = field_ > np.quantile(field_, 1.0 - spec.dirt_fraction)
    cy, cx = np.meshgrid((np.arange(H) + 0.5) * res, (np.arange(W) + 0.5) * res, indexing="ij")
    for line in spec.roads:
        for a, b in zip(line, line[1:]):
            dirt |= _segment_distance(cx, cy, a, b) <= spec.road_width / 2
    for x, y, r, c in spec.patches:
        disk = np.hypot(cx - x, cy - y) <= r
        dirt = dirt & ~disk if c == VEGETATION else dirt | disk
    cells = np.where(dirt, DIRT, VEGETATION)
    grid = SemanticGrid(N_CLASSES, cells, res, (0.0, 0.0))

    # clearance from every vegetation cell center to the nearest dirt cell center, in meters;
    # a bush center sits up to res/sqrt(2) from its cell center and the nearest dirt
    # corner lies up to res/sqrt(2) short of that dirt cell's center
    clearance = ndimage.distance_transform_edt(~dirt) * res if dirt.any() else np.full((H, W), np.inf)
    veg_area = float((~dirt).sum()) * res * res
    n = rng.poisson(spec.bush_density * veg_area)
    xy, r = [], []
    r0, r1 = spec.bush_radius
    attempts = 0
    while len(xy) < n and attempts < 50 * max(n, 1):
        attempts += 1
        x, y = rng.uniform(0, spec.extent[0]), rng.uniform(0, spec.extent[1])
        radius = rng.uniform(r0, r1)
        h, w = min(int(y / res), H - 1), min(int(x / res), W - 1)
        if dirt[h, w] or clearance[h, w] < radius + math.sqrt(2.0) * res:
            continue
        xy.append((x, y))
        r.append(radius)
    solid = rng.random(len(xy)) < spec.q_solid
    return SimWorld(spec, grid, np.array(xy, dtype=float).reshape(-1, 2), np.array(r, dtype=float), solid)


def ground_truth_speed(world: SimWorld, position, commanded: float, rng: np.random.Generator) -> float:
    """Realized speed at ``position`` for a ``commanded`` speed (m/s).

    Inside a solid bush the robot does not move.  Elsewhere the speed is the
    terrain gain times the command plus Gaussian noise, clamped to
    ``[0, s_max]``.
    """
    x, y = float(position[0]), float(position[1])
    if not world.inside(x, y):
        raise ParameterError(f"position {position} lies outside the {world.extent} extent")
    if world.solid_bush_at(x, y) >= 0:
        return 0.0
    return _free_speed(world, x, y, commanded, rng)


def _free_speed(world: SimWorld, x: float, y: float, commanded: float, rng: np.random.Generator) -> float:
    gain, noise = world.response.gain_noise(world.class_at(x, y))
    s = float(gain) * commanded + float(noise) * rng.standard_normal()
    return min(max(s, 0.0), world.response.s_max)


def solid_vegetation_fraction(world: SimWorld, step: float = 0.1) -> float:
    """Share of vegetation area covered by solid bushes, measured on a ``step`` raster.

    This is the probability that a command issued at a uniformly random
    vegetation point is met with a standstill.
    """
    xs = np.arange(step / 2, world.extent[0], step)
    ys = np.arange(step / 2, world.extent[1], step)
    X, Y = np.meshgrid(xs, ys)
    veg = world.class_at(X, Y) == VEGETATION
    if not veg.any():
        return 0.0
    covered = np.zeros_like(veg)
    for (bx, by), r in zip(world.bush_xy[world.bush_solid], world.bush_r[world.bush_solid]):
        i0, i1 = np.searchsorted(ys, [by - r, by + r])
        j0, j1 = np.searchsorted(xs, [bx - r, bx + r])
        sub = (X[i0:i1, j0:j1] - bx) ** 2 + (Y[i0:i1, j0:j1] - by) ** 2 < r * r
        covered[i0:i1, j0:j1] |= sub
    return float((covered & veg).sum() / veg.sum())


def generative_pmf(
    world: SimWorld, terrain_class: int, commands, n_bins: int = 10, stuck_probability: float | None = None
) -> np.ndarray:
    """Binned ground-truth realized-speed PMF, averaged over ``commands``.

    Free driving is a clamped Gaussian around ``gain * command``; clamping
    piles the tails onto the end bins.  Vegetation adds a standstill with the
    solid-bush area share (or ``stuck_probability`` when given).
    """
    commands = np.atleast_1d(np.asarray(commands, dtype=float))
    gain, noise = (float(v) for v in world.response.gain_noise(terrain_class))
    s_max = world.response.s_max
    inner = np.linspace(0.0, s_max, n_bins + 1)[1:-1]
    if noise > 0:
        z = (inner[None, :] - gain * commands[:, None]) / (noise * math.sqrt(2.0))
        cdf = 0.5 * (1.0 + np.vectorize(math.erf)(z))
    else:
        cdf = (inner[None, :] >= gain * commands[:, None]).astype(float)
    edges = np.concatenate([np.zeros((len(commands), 1)), cdf, np.ones((len(commands), 1))], axis=1)
    free = np.diff(edges, axis=1).mean(axis=0)
    if terrain_class != VEGETATION:
        return free
    p = solid_vegetation_fraction(world) if stuck_probability is None else stuck_probability
    out = (1.0 - p) * free
    out[0] += p
    return out


# --------------------------------------------------------------------------- data collection


@dataclass(frozen=True)
class TeleopConfig:
    """Random-walk operator: piecewise-constant speed and turn-rate commands."""

    log_rate: float = 50.0
    hold_time: tuple[float, float] = (1.0, 3.0)
    max_turn_rate: float = 0.6
    border_margin: float = 3.0

    def __post_init__(self) -> None:
        h0, h1 = self.hold_time
        if self.log_rate <= 0 or not 0 < h0 <= h1 or self.max_turn_rate < 0 or self.border_margin < 0:
            raise ParameterError("invalid teleop configuration")


def collect_dataset(
    world: SimWorld, duration: float, rng: np.random.Generator, teleop: TeleopConfig | None = None
) -> list[Sample]:
    """Log ``(class, commanded, realized)`` along a simulated joystick drive.

    The operator holds a random commanded speed in ``[0, s_max]`` and a random
    turn rate for a random hold time, and steers back toward the middle when
    close to the border.  The operator's path follows the commanded motion,
    so the logged points cover terrain in proportion to area; the realized
    speed at each logged point comes from the ground-truth response.
    """
    teleop = teleop or TeleopConfig()
    if not duration > 0:
        raise ParameterError(f"duration must be positive, got {duration}")
    n = int(round(duration * teleop.log_rate))
    dt = 1.0 / teleop.log_rate
    s_max = world.response.s_max
    W, H = world.extent
    x, y = W / 2, H / 2
    heading = rng.uniform(-math.pi, math.pi)
    xs, ys, cmds = np.empty(n), np.empty(n), np.empty(n)
    hold_left, cmd, turn = 0.0, 0.0, 0.0
    m = teleop.border_margin
    for i in range(n):
        if hold_left <= 0:
            hold_left = rng.uniform(*teleop.hold_time)
            cmd = rng.uniform(0.0, s_max)
            turn = rng.uniform(-teleop.max_turn_rate, teleop.max_turn_rate)
        xs[i], ys[i], cmds[i] = x, y, cmd
        if not (m <= x <= W - m and m <= y <= H - m):
            # steer straight back toward the middle of the field
            heading = math.atan2(H / 2 - y, W / 2 - x)
        heading += turn * dt
        x = min(max(x + cmd * math.cos(heading) * dt, 0.0), np.nextafter(W, 0))
        y = min(max(y + cmd * math.sin(heading) * dt, 0.0), np.nextafter(H, 0))
        hold_left -= dt
    cls = world.class_at(xs, ys)
    gain, noise = world.response.gain_noise(cls)
    realized = np.clip(gain * cmds + noise * rng.standard_normal(n), 0.0, s_max)
    realized[world.in_solid_bush(xs, ys)] = 0.0
    return [Sample(int(c), float(a), float(b)) for c, a, b in zip(cls, cmds, realized)]


# --------------------------------------------------------------------------- closed-loop trials


@dataclass(frozen=True)
class TrialConfig:
    """Closed-loop trial settings.

    ``off_map_query_speed`` is handed to the planner: the published map is a
    crop of terrain that is known beyond its edges, so rollouts leaving the
    crop are not treated as hitting a wall.  Cells outside the world itself
    stay unknown and read as 0 m/s.
    """

    max_time: float = 40.0
    map_rate: float = 2.0
    map_size: int = 100
    n_layers: int = 10
    stuck_heading_noise: float = 0.0
    off_map_query_speed: bool = True

    def __post_init__(self) -> None:
        if self.max_time <= 0 or self.map_rate <= 0 or self.map_size < 1 or self.n_layers < 1:
            raise ParameterError("invalid trial configuration")
        if self.stuck_heading_noise < 0:
            raise ParameterError("stuck_heading_noise must be non-negative")


@dataclass
class TrialResult:
    success: bool
    time_to_goal: float | None
    mean_speed: float
    path: np.ndarray
    failure_mode: str
    elapsed: float
    vegetation_distance: float


def make_plant(world: SimWorld, config: MppiConfig, rng: np.random.Generator, stuck_heading_noise: float = 0.0):
    """Plant step: kinematics scaled by the realized speed, with solid-bush contact.

    Outside solid bushes the commanded displacement is scaled by
    ``realized / commanded``.  A solid bush is rigid: once the robot's center
    is inside one, a step is blocked unless it backs out, that is, moves
    farther from the bush center and closer to the last position before
    contact (without such a position, as when starting inside, moving
    farther from the center suffices).  An unblocked step inside proceeds at
    the vegetation response.  The world border blocks motion as well.

    Blocked steps spin the wheels in place.  With ``stuck_heading_noise > 0``
    each one adds ``stuck_heading_noise * sqrt(dt) * N(0, 1)`` rad to an
    odometry heading error that persists for the rest of the trial: the
    returned state (what the planner sees) carries the believed heading,
    while motion follows the true heading.  Positions are always true.
    """
    memory = {"error": 0.0, "entry": None}

    def plant(believed: RobotState, control, dt: float) -> RobotState:
        err = memory["error"]
        state = RobotState(believed.x, believed.y, believed.heading - err, believed.speed)
        proposal = dynamics_step(state, control, dt, config)
        v_cmd = proposal.speed
        dx, dy = proposal.x - state.x, proposal.y - state.y
        stuck = world.solid_bush_at(state.x, state.y)
        if stuck < 0:
            memory["entry"] = (state.x, state.y)
        if v_cmd == 0.0:
            out = proposal
        elif stuck >= 0 and not _backs_out(world.bush_xy[stuck], memory["entry"], state, dx, dy):
            if stuck_heading_noise > 0:
                memory["error"] = err = err + stuck_heading_noise * math.sqrt(dt) * rng.standard_normal()
            out = RobotState(state.x, state.y, proposal.heading, 0.0)
        else:
            realized = _free_speed(world, state.x, state.y, v_cmd, rng)
            scale = realized / v_cmd
            nx, ny = state.x + dx * scale, state.y + dy * scale
            if world.inside(nx, ny):
                out = RobotState(nx, ny, proposal.heading, realized)
            else:
                out = RobotState(state.x, state.y, proposal.heading, 0.0)
        return RobotState(out.x, out.y, out.heading + err, out.speed)

    return plant


def _backs_out(center, entry, state: RobotState, dx: float, dy: float) -> bool:
    """True if the step ``(dx, dy)`` leaves ``center`` and, when known, heads back toward ``entry``."""
    if (state.x - center[0]) * dx + (state.y - center[1]) * dy <= 0.0:
        return False
    return entry is None or (entry[0] - state.x) * dx + (entry[1] - state.y) * dy > 0.0


def _window_provider(world: SimWorld, model: MlpModel, params: RiskParams, trial: TrialConfig):
    period = 1.0 / trial.map_rate
    cache: dict[str, object] = {"next": 0.0, "map": None}

    def provider(state: RobotState, t: float) -> RiskSpeedMap:
        # the map is republished at the map rate, centred on the robot at publish time
        if cache["map"] is None or t >= cache["next"] - 1e-9:
            window = world.grid.window((state.x, state.y), trial.map_size, trial.map_size)
            cache["map"] = generate_risk_map(window, model, trial.n_layers, params)
            cache["next"] = t + period
        return cache["map"]

    return provider


def run_trial(
    world: SimWorld,
    start,
    goal,
    model: MlpModel,
    params: RiskParams,
    mppi: MppiConfig | None = None,
    trial: TrialConfig | None = None,
    seed: int = 0,
) -> TrialResult:
    """Drive from ``start`` to ``goal`` with risk-aware MPPI on maps regenerated at the map rate.

    The robot starts at rest, facing the goal.  ``seed`` fixes both the
    planner noise and the terrain response noise.
    """
    trial = trial or TrialConfig()
    mppi = replace(mppi or MppiConfig(), off_map_query_speed=trial.off_map_query_speed)
    if not world.inside(*start) or not world.inside(*goal):
        raise ParameterError("start and goal must lie inside the world")
    plan_seq, plant_seq = np.random.SeedSequence(seed).spawn(2)
    heading = math.atan2(goal[1] - start[1], goal[0] - start[0])
    initial = RobotState(float(start[0]), float(start[1]), heading, 0.0)
    plant = make_plant(world, mppi, np.random.default_rng(plant_seq), trial.stuck_heading_noise)
    result = receding_horizon_control(
        initial,
        _window_provider(world, model, params, trial),
        goal,
        mppi,
        max_time=trial.max_time,
        plant=plant,
        rng=np.random.default_rng(plan_seq),
    )
    path = np.array([[r.x, r.y] for r in result.log] + [[result.final_state.x, result.final_state.y]])
    steps = np.diff(path, axis=0)
    lengths = np.hypot(steps[:, 0], steps[:, 1])
    mids = path[:-1] + steps / 2 if len(steps) else np.empty((0, 2))
    veg = float(lengths[world.class_at(mids[:, 0], mids[:, 1]) == VEGETATION].sum()) if len(steps) else 0.0
    elapsed = result.time
    mean_speed = float(lengths.sum() / elapsed) if elapsed > 0 else 0.0
    return TrialResult(
        success=result.success,
        time_to_goal=elapsed if result.success else None,
        mean_speed=mean_speed,
        path=path,
        failure_mode="none" if result.success else "timeout",
        elapsed=elapsed,
        vegetation_distance=veg,
    )


# --------------------------------------------------------------------------- benchmark


@dataclass(frozen=True)
class BenchmarkRow:
    beta: float
    n_trials: int
    n_success: int
    success_rate: float
    mean_speed_success: float
    mean_time_success: float


@dataclass(frozen=True)
class TrialRecord:
    beta: float
    pair: int
    rep: int
    result: TrialResult = field(compare=False)


@dataclass(frozen=True)
class BenchmarkSetup:
    """Everything a trial needs besides its own (beta, pair, repetition, seed)."""

    world: SimWorld
    model: MlpModel
    alpha: float
    mppi: MppiConfig
    trial: TrialConfig


def _run_one(setup: BenchmarkSetup, beta: float, start, goal, seed: int) -> TrialResult:
    return run_trial(setup.world, start, goal, setup.model, RiskParams(setup.alpha, beta),
                     setup.mppi, setup.trial, seed)


def benchmark(
    world: SimWorld,
    pairs,
    betas,
    trials_per_pair: int,
    model: MlpModel,
    alpha: float = 0.1,
    mppi: MppiConfig | None = None,
    trial: TrialConfig | None = None,
    seed: int = 0,
    jobs: int = 1,
) -> tuple[list[BenchmarkRow], list[TrialRecord]]:
    """Success rate and mean speed over successes for every beta.

    Trial ``(pair, rep)`` gets the same seed under every beta (common random
    numbers), spawned in order from ``seed``.  ``jobs > 1`` runs trials in
    worker processes; results do not depend on it.
    """
    pairs, betas = list(pairs), [float(b) for b in betas]
    if not pairs or not betas or trials_per_pair < 1:
        raise ParameterError("benchmark needs at least one pair, one beta and one trial per pair")
    setup = BenchmarkSetup(world, model, alpha, mppi or MppiConfig(), trial or TrialConfig())
    children = np.random.SeedSequence(seed).spawn(len(pairs) * trials_per_pair)
    seeds = [int(c.generate_state(1)[0]) for c in children]
    jobs_list = [
        (beta, p, rep, pairs[p][0], pairs[p][1], seeds[p * trials_per_pair + rep])
        for beta in betas
        for p in range(len(pairs))
        for rep in range(trials_per_pair)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_one, setup, b, s, g, sd) for b, _, _, s, g, sd in jobs_list]
            results = [f.result() for f in futures]
    else:
        results = [_run_one(setup, b, s, g, sd) for b, _, _, s, g, sd in jobs_list]
    records = [TrialRecord(b, p, rep, res) for (b, p, rep, *_), res in zip(jobs_list, results)]
    rows = []
    for beta in betas:
        mine = [r.result for r in records if r.beta == beta]
        ok = [r for r in mine if r.success]
        rows.append(BenchmarkRow(
            beta,
            len(mine),
            len(ok),
            len(ok) / len(mine),
            float(np.mean([r.mean_speed for r in ok])) if ok else math.nan,
            float(np.mean([r.time_to_goal for r in ok])) if ok else math.nan,
        ))
    return rows, records


def save_benchmark(rows: list[BenchmarkRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BENCHMARK_HEADER)
        for r in rows:
            writer.writerow([repr(r.beta), r.n_trials, r.n_success, repr(r.success_rate),
                             repr(r.mean_speed_success), repr(r.mean_time_success)])


def save_trials(records: list[TrialRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRIALS_HEADER)
        for rec in records:
            r = rec.result
            writer.writerow([repr(rec.beta), rec.pair, rec.rep, int(r.success), repr(r.elapsed),
                             repr(r.mean_speed), repr(r.vegetation_distance), r.failure_mode])


# --------------------------------------------------------------------------- world specs


def training_world_spec(seed: int = 0) -> WorldSpec:
    """Mostly vegetation with scattered dirt patches, roughly the split of the logged data."""
    return WorldSpec(seed=seed)


def reference_model(seed: int = 0, duration: float = 180.0) -> MlpModel:
    """Model trained on ``duration`` seconds of teleoperation in the training world.

    The world layout is fixed; ``seed`` drives the operator, the speed noise
    and the training run.
    """
    world = generate_world(training_world_spec())
    data = collect_dataset(world, duration, np.random.default_rng(seed))
    return train(data, TrainConfig(seed=seed), n_classes=N_CLASSES)


def benchmark_world_spec(seed: int = 1000) -> WorldSpec:
    """Open dirt with one vegetation island across each of four 24 m start/goal lines.

    Every island (radius 5 m) sits 2 m to one side of its line, so the
    straight drive crosses about 9 m of bush-studded vegetation while a
    risk-averse planner can swing around the island on dirt.  Small dirt
    disks keep bushes away from the start and goal.
    """
    length, island, offset = 24.0, 5.0, 2.0
    pairs, patches = [], []
    for x0, y0, sign in ((6.0, 8.0, 1.0), (54.0, 22.0, -1.0), (6.0, 38.0, 1.0), (54.0, 52.0, -1.0)):
        goal = (x0 + sign * length, y0)
        pairs.append(((x0, y0), goal))
        patches += [
            (x0 + sign * length / 2, y0 + sign * offset, island, VEGETATION),
            (x0, y0, 3.0, DIRT),
            (goal[0], goal[1], 3.0, DIRT),
        ]
    return WorldSpec(seed=seed, dirt_fraction=1.0, patches=tuple(patches), pairs=tuple(pairs))


def spec_to_dict(spec: WorldSpec) -> dict:
    doc = asdict(spec)
    doc["extent"] = list(spec.extent)
    doc["bush_radius"] = list(spec.bush_radius)
    doc["roads"] = [[list(p) for p in line] for line in spec.roads]
    doc["patches"] = [list(p) for p in spec.patches]
    doc["pairs"] = [[list(s), list(g)] for s, g in spec.pairs]
    return doc


def spec_from_dict(doc: dict, where: str = "world spec") -> WorldSpec:
    if not isinstance(doc, dict):
        raise FormatError(f"{where}: expected a JSON object")
    known = {f.name for f in fields(WorldSpec)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise FormatError(f"{where}: unknown field(s) {', '.join(unknown)}")
    try:
        kwargs = dict(doc)
        if "response" in kwargs:
            resp = kwargs["response"]
            bad = sorted(set(resp) - {f.name for f in fields(TerrainResponse)})
            if bad:
                raise FormatError(f"{where}: unknown response field(s) {', '.join(bad)}")
            kwargs["response"] = TerrainResponse(**{k: float(v) for k, v in resp.items()})
        return WorldSpec(**kwargs)
    except (ParameterError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{where}: {exc}") from exc


def save_world_spec(spec: WorldSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=1))


def load_world_spec(path: str | Path) -> WorldSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return spec_from_dict(doc, str(path))

