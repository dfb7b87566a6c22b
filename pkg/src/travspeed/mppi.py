"""Minimum-time MPPI over a risk-adjusted speed map for a differential-drive robot.

A rollout's cost is its predicted traversal time: each step spends
``s_t * dt / m(p_t, s_t)`` seconds, where ``m`` is the map's risk-adjusted
speed for the cell under the robot at the layer of its current speed.  Once a
rollout enters the goal circle it stops accumulating cost; otherwise the
straight-line distance left is charged at a default speed.

The batched rollout simulation and costing runs in a numba kernel;
:func:`rollout_cost` is the plain-Python statement of the same cost.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Union

import numba
import numpy as np

from travspeed.errors import ParameterError, PlanningError
from travspeed.risk import RiskSpeedMap, lookup

TRAJECTORY_HEADER = ("t", "x", "y", "heading", "speed", "omega_l", "omega_r", "stage_cost")


def wrap_angle(theta: float) -> float:
    """Wrap into ``(-pi, pi]``."""
    w = (theta + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if w == -math.pi else w


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    heading: float = 0.0
    speed: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Control:
    """Wheel angular speeds in rad/s."""

    omega_left: float
    omega_right: float


@dataclass(frozen=True)
class MppiConfig:
    """Sampling, costing and vehicle parameters.

    ``temperature`` scales the importance weights.  ``control_cost_weight``
    multiplies the sampling-correction term ``u^T Sigma^-1 eps``; ``None``
    uses ``temperature``, the textbook coupling, and 0 removes the term.
    ``off_map_query_speed`` makes positions beyond the map read as the query
    speed instead of 0 m/s, for maps that are a moving crop of benign
    terrain; unknown cells inside the map still read as 0 m/s.
    """

    n_rollouts: int = 500
    horizon_steps: int = 100
    dt: float = 0.05
    noise_std: float = 5.0
    temperature: float = 1.0
    control_cost_weight: float | None = 0.0
    s_default: float = 0.5
    goal_tolerance: float = 3.0
    wheel_radius: float = 0.3
    track_width: float = 1.2
    s_floor: float = 0.05
    omega_max: float = 16.7
    burn_in_iterations: int = 100
    iterations_per_step: int = 1
    off_map_query_speed: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_rollouts < 1 or self.horizon_steps < 1:
            raise ParameterError("n_rollouts and horizon_steps must be >= 1")
        if self.iterations_per_step < 1 or self.burn_in_iterations < 0:
            raise ParameterError("need at least one iteration per step and non-negative burn-in")
        for name in ("dt", "temperature", "s_default", "goal_tolerance", "wheel_radius",
                     "track_width", "s_floor", "omega_max"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.noise_std < 0:
            raise ParameterError(f"noise_std must be non-negative, got {self.noise_std}")
        if self.control_cost_weight is not None and self.control_cost_weight < 0:
            raise ParameterError("control_cost_weight must be non-negative")

    @property
    def coupling(self) -> float:
        return self.temperature if self.control_cost_weight is None else self.control_cost_weight

    @property
    def max_speed(self) -> float:
        return self.wheel_radius * self.omega_max


def dynamics_step(state: RobotState, control: Control, dt: float, config: MppiConfig | None = None) -> RobotState:
    """Forward-Euler unicycle step driven by the two wheel speeds."""
    config = config or MppiConfig()
    r, b = config.wheel_radius, config.track_width
    v = r * (control.omega_left + control.omega_right) / 2.0
    w = r * (control.omega_right - control.omega_left) / b
    return RobotState(
        state.x + v * math.cos(state.heading) * dt,
        state.y + v * math.sin(state.heading) * dt,
        state.heading + w * dt,
        abs(v),
    )


def _within(state: RobotState, goal, tol: float) -> bool:
    return math.hypot(goal[0] - state.x, goal[1] - state.y) <= tol


def stage_cost(state: RobotState, speed_map: RiskSpeedMap, config: MppiConfig) -> float:
    """Predicted seconds spent on this step: ``s * dt / max(m(p, s), s_floor)``."""
    m = map_speed(speed_map, state.position, state.speed, config)
    return state.speed * config.dt / max(m, config.s_floor)


def rollout_cost(states: list[RobotState], speed_map: RiskSpeedMap, goal, config: MppiConfig) -> float:
    """Stage costs of states ``0..T-1`` plus the time-to-go of state ``T``.

    Every cost from the first state inside the goal circle onward is zero.
    """
    total = 0.0
    done = False
    for s in states[:-1]:
        done = done or _within(s, goal, config.goal_tolerance)
        if not done:
            total += stage_cost(s, speed_map, config)
    last = states[-1]
    if not (done or _within(last, goal, config.goal_tolerance)):
        total += math.hypot(goal[0] - last.x, goal[1] - last.y) / config.s_default
    return total


def simulate(state: RobotState, controls: np.ndarray, config: MppiConfig) -> list[RobotState]:
    """States ``0..T`` produced by applying each row of ``controls`` in turn."""
    out = [state]
    for wl, wr in controls:
        out.append(dynamics_step(out[-1], Control(float(wl), float(wr)), config.dt, config))
    return out


def map_speed(speed_map: RiskSpeedMap, p, s: float, config: MppiConfig) -> float:
    """Map lookup under the configured off-map policy."""
    if config.off_map_query_speed and speed_map.geometry.cell_of(p[0], p[1]) is None:
        return max(float(s), 0.0)
    return lookup(speed_map, p, s)


@numba.njit(cache=True)
def _map_speed(values, ox, oy, res, s_max, x, y, s, off_map_query):
    K, H, W = values.shape
    fw = (x - ox) / res
    fh = (y - oy) / res
    if not (fw >= 0.0 and fh >= 0.0 and fw < W and fh < H):
        return max(s, 0.0) if off_map_query else 0.0
    k = int(max(s, 0.0) * K / s_max)
    if k > K - 1:
        k = K - 1
    v = values[k, int(fh), int(fw)]
    return v if v >= 0.0 else 0.0


@numba.njit(cache=True)
def _rollout_costs(state, base, noise, scale, bound, values, geo, goal, par):
    """Costs of rollouts driven by ``clip(base + scale * noise[i], -bound, bound)`` from ``state``.

    ``geo`` = (origin_x, origin_y, resolution, s_max);
    ``par`` = (dt, wheel_radius, track_width, s_floor, s_default, goal_tolerance, off_map_query).
    """
    dt, r, track, s_floor, s_default, tol = par[0], par[1], par[2], par[3], par[4], par[5]
    off_map_query = par[6] > 0.0
    n, T = noise.shape[0], noise.shape[1]
    out = np.empty(n)
    for i in range(n):
        x, y, th, s = state[0], state[1], state[2], state[3]
        done = math.hypot(goal[0] - x, goal[1] - y) <= tol
        cost = 0.0
        for t in range(T):
            if not done:
                m = _map_speed(values, geo[0], geo[1], geo[2], geo[3], x, y, s, off_map_query)
                cost += s * dt / max(m, s_floor)
            wl = min(max(base[t, 0] + scale * noise[i, t, 0], -bound), bound)
            wr = min(max(base[t, 1] + scale * noise[i, t, 1], -bound), bound)
            v = r * (wl + wr) / 2.0
            w = r * (wr - wl) / track
            x += v * math.cos(th) * dt
            y += v * math.sin(th) * dt
            th += w * dt
            s = abs(v)
            if not done and math.hypot(goal[0] - x, goal[1] - y) <= tol:
                done = True
        if not done:
            cost += math.hypot(goal[0] - x, goal[1] - y) / s_default
        out[i] = cost
    return out


def batch_rollout_costs(
    state: RobotState, controls: np.ndarray, speed_map: RiskSpeedMap, goal, config: MppiConfig
) -> np.ndarray:
    """Rollout cost of each ``(T, 2)`` control sequence in ``controls`` (shape ``(N, T, 2)``)."""
    controls = np.ascontiguousarray(controls, dtype=np.float64)
    return _perturbed_rollout_costs(
        state, np.zeros(controls.shape[1:]), controls, 1.0, math.inf, speed_map, goal, config
    )


def _perturbed_rollout_costs(state, base, noise, scale, bound, speed_map, goal, config) -> np.ndarray:
    g = speed_map.geometry
    return _rollout_costs(
        np.array([state.x, state.y, state.heading, state.speed]),
        np.ascontiguousarray(base, dtype=np.float64),
        noise,
        float(scale),
        float(bound),
        np.ascontiguousarray(speed_map.values),
        np.array([g.origin[0], g.origin[1], g.resolution, speed_map.s_max]),
        np.array([goal[0], goal[1]], dtype=np.float64),
        np.array([config.dt, config.wheel_radius, config.track_width, config.s_floor,
                  config.s_default, config.goal_tolerance, float(config.off_map_query_speed)]),
    )


def importance_weights(costs: np.ndarray, temperature: float) -> np.ndarray:
    """``exp(-(S - min S) / lambda)`` normalised to sum to one."""
    costs = np.asarray(costs, dtype=np.float64)
    finite = np.isfinite(costs)
    if not finite.any():
        raise PlanningError("every rollout has a non-finite cost")
    w = np.where(finite, np.exp(-(costs - costs[finite].min()) / temperature), 0.0)
    return w / w.sum()


@dataclass(frozen=True)
class StepDiagnostics:
    min_cost: float
    mean_cost: float
    effective_samples: float


def mppi_step(
    nominal: np.ndarray, state: RobotState, speed_map: RiskSpeedMap, goal, config: MppiConfig, rng: np.random.Generator
) -> tuple[np.ndarray, StepDiagnostics]:
    """One importance-weighted update of the ``(T, 2)`` nominal wheel-speed sequence."""
    nominal = np.asarray(nominal, dtype=np.float64)
    if nominal.shape != (config.horizon_steps, 2):
        raise ParameterError(f"nominal must have shape ({config.horizon_steps}, 2), got {nominal.shape}")
    if config.noise_std == 0:
        cost = float(batch_rollout_costs(state, nominal[None], speed_map, goal, config)[0])
        return nominal.copy(), StepDiagnostics(cost, cost, 1.0)
    # eps = noise_std * z; scaling and clamping happen inside the rollout kernel
    z = rng.standard_normal((config.n_rollouts,) + nominal.shape)
    # rollouts see the clamped controls; the update averages the raw draws, so a
    # nominal sitting at a bound is not dragged inward by one-sided clipping
    costs = _perturbed_rollout_costs(state, nominal, z, config.noise_std, config.omega_max, speed_map, goal, config)
    if config.coupling > 0:
        costs = costs + config.coupling / config.noise_std * np.tensordot(z, nominal, 2)
    w = importance_weights(costs, config.temperature)
    updated = np.clip(nominal + config.noise_std * np.tensordot(w, z, 1), -config.omega_max, config.omega_max)
    return updated, StepDiagnostics(float(costs.min()), float(costs.mean()), float(1.0 / np.sum(w * w)))


# --------------------------------------------------------------------------- closed loop

MapProvider = Union[RiskSpeedMap, Callable[[RobotState, float], RiskSpeedMap]]
Plant = Callable[[RobotState, Control, float], RobotState]


@dataclass(frozen=True)
class TrajectoryRow:
    t: float
    x: float
    y: float
    heading: float
    speed: float
    omega_l: float
    omega_r: float
    stage_cost: float


@dataclass
class ControlResult:
    success: bool
    time: float
    final_state: RobotState
    log: list[TrajectoryRow] = field(default_factory=list)

    def positions(self) -> np.ndarray:
        """``(n + 1, 2)`` path: every logged pose plus the final one."""
        pts = [(r.x, r.y) for r in self.log] + [self.final_state.position]
        return np.array(pts)


def receding_horizon_control(
    initial: RobotState,
    map_provider: MapProvider,
    goal,
    config: MppiConfig,
    max_time: float = 40.0,
    plant: Plant | None = None,
    rng: np.random.Generator | None = None,
) -> ControlResult:
    """Drive from ``initial`` toward ``goal`` until inside the tolerance or out of time.

    Each control period runs ``iterations_per_step`` MPPI updates (plus
    ``burn_in_iterations`` before the first), applies the first control to
    ``plant`` (ideal kinematics by default), then shifts the nominal sequence
    left and repeats its last control at the tail.  ``map_provider`` is either
    a fixed map or a callable ``(state, t) -> map`` queried every period.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    plant = plant or (lambda s, u, dt: dynamics_step(s, u, dt, config))
    nominal = np.zeros((config.horizon_steps, 2))
    state, t = initial, 0.0
    log: list[TrajectoryRow] = []
    n_steps = int(round(max_time / config.dt))
    for step in range(n_steps):
        if _within(state, goal, config.goal_tolerance):
            return ControlResult(True, t, state, log)
        speed_map = map_provider(state, t) if callable(map_provider) else map_provider
        iters = config.iterations_per_step + (config.burn_in_iterations if step == 0 else 0)
        for _ in range(iters):
            nominal, _diag = mppi_step(nominal, state, speed_map, goal, config, rng)
        u = Control(float(nominal[0, 0]), float(nominal[0, 1]))
        log.append(TrajectoryRow(t, state.x, state.y, state.heading, state.speed,
                                 u.omega_left, u.omega_right, stage_cost(state, speed_map, config)))
        state = plant(state, u, config.dt)
        nominal = np.concatenate([nominal[1:], nominal[-1:]])
        t = (step + 1) * config.dt
    return ControlResult(_within(state, goal, config.goal_tolerance), t, state, log)


def save_trajectory(result: ControlResult, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_HEADER)
        for row in result.log:
            writer.writerow([repr(float(getattr(row, k))) for k in TRAJECTORY_HEADER])


def without_control_cost(config: MppiConfig) -> MppiConfig:
    return replace(config, control_cost_weight=0.0)
