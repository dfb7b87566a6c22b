import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from travspeed.errors import FormatError, ParameterError
from travspeed.model import Sample, TrainConfig, histogram_estimate, train
from travspeed.mppi import Control, MppiConfig, RobotState
from travspeed.risk import RiskParams
from travspeed.simworld import (
    BENCHMARK_HEADER,
    DIRT,
    VEGETATION,
    SimWorld,
    TerrainResponse,
    TrialConfig,
    WorldSpec,
    benchmark,
    benchmark_world_spec,
    collect_dataset,
    generate_world,
    generative_pmf,
    ground_truth_speed,
    load_world_spec,
    make_plant,
    run_trial,
    save_benchmark,
    save_world_spec,
    solid_vegetation_fraction,
    training_world_spec,
)


@pytest.fixture(scope="module")
def train_world():
    return generate_world(training_world_spec())


def dirt_world(extent=(50.0, 10.0)):
    return generate_world(WorldSpec(seed=3, extent=extent, dirt_fraction=1.0))


def single_bush_world(solid=True, center=(10.0, 5.0), radius=1.0):
    """Vegetation strip with one bush, placed by hand."""
    base = generate_world(WorldSpec(seed=4, extent=(20.0, 10.0), dirt_fraction=0.0, bush_density=0.0))
    return SimWorld(base.spec, base.grid, np.array([center]), np.array([radius]), np.array([solid]))


@pytest.fixture(scope="module")
def dirt_model():
    """A model that has only seen clean dirt driving."""
    rng = np.random.default_rng(0)
    cmd = rng.uniform(0, 5, 4000)
    real = np.clip(0.98 * cmd + rng.normal(0, 0.1, cmd.size), 0, 5)
    data = [Sample(DIRT, float(c), float(r)) for c, r in zip(cmd, real)]
    data += [Sample(VEGETATION, float(c), 0.0) for c in cmd[:500]]
    return train(data, TrainConfig(seed=0), n_classes=2)


class TestWorldGeneration:
    def test_grid_resolution_and_classes(self, train_world):
        assert train_world.grid.resolution == pytest.approx(0.4)
        assert train_world.grid.height == 150 and train_world.grid.width == 150
        assert set(np.unique(train_world.grid.cells)) <= {DIRT, VEGETATION}

    def test_bushes_sit_on_vegetation(self, train_world):
        w = train_world
        assert len(w.bush_r) > 0
        for (x, y), r in zip(w.bush_xy, w.bush_r):
            for a in np.linspace(0, 2 * math.pi, 16, endpoint=False):
                px, py = x + 0.99 * r * math.cos(a), y + 0.99 * r * math.sin(a)
                if w.inside(px, py):
                    assert w.class_at(px, py) == VEGETATION

    def test_solid_share_near_q(self, train_world):
        assert train_world.bush_solid.mean() == pytest.approx(0.25, abs=0.06)

    def test_deterministic(self):
        a, b = generate_world(training_world_spec(5)), generate_world(training_world_spec(5))
        assert np.array_equal(a.grid.cells, b.grid.cells)
        assert np.array_equal(a.bush_xy, b.bush_xy) and np.array_equal(a.bush_solid, b.bush_solid)

    def test_roads_are_dirt(self):
        road = ((5.0, 5.0), (30.0, 20.0), (50.0, 10.0))
        w = generate_world(WorldSpec(seed=2, dirt_fraction=0.0, roads=(road,)))
        for a, b in zip(road, road[1:]):
            for t in np.linspace(0, 1, 20):
                x, y = a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])
                assert w.class_at(x, y) == DIRT

    def test_benchmark_lines_cross_one_island(self):
        w = generate_world(benchmark_world_spec())
        assert len(w.spec.pairs) == 4
        for start, goal in w.spec.pairs:
            assert w.class_at(*start) == DIRT and w.class_at(*goal) == DIRT
            xs = np.linspace(start[0], goal[0], 241)
            veg = w.class_at(xs, np.full_like(xs, start[1])) == VEGETATION
            crossed = np.count_nonzero(veg) * abs(goal[0] - start[0]) / 240
            assert 7.0 < crossed < 11.0
            # a dirt lane 8 m off the line on the side away from the island
            side = -1.0 if goal[0] > start[0] else 1.0
            assert np.all(w.class_at(xs, np.full_like(xs, start[1] + 8.0 * side)) == DIRT)

    def test_bad_spec(self):
        with pytest.raises(ParameterError):
            WorldSpec(q_solid=1.5)
        with pytest.raises(ParameterError):
            WorldSpec(bush_radius=(1.0, 0.5))
        with pytest.raises(ParameterError):
            WorldSpec(pairs=(((0.0, 0.0), (100.0, 0.0)),))


class TestGroundTruth:
    def test_solid_bush_stops(self):
        w = single_bush_world(solid=True)
        rng = np.random.default_rng(0)
        assert all(ground_truth_speed(w, (10.2, 5.1), c, rng) == 0.0 for c in (0.5, 2.0, 5.0))

    def test_soft_bush_is_vegetation(self):
        w = single_bush_world(solid=False)
        rng = np.random.default_rng(1)
        draws = [ground_truth_speed(w, (10.0, 5.0), 4.0, rng) for _ in range(4000)]
        assert np.mean(draws) == pytest.approx(4.0 * w.response.vegetation_gain, abs=0.02)

    def test_dirt_mean_and_unimodal(self):
        # the documented reference response: gain 0.95, noise 0.1
        spec = WorldSpec(seed=3, extent=(10.0, 10.0), dirt_fraction=1.0, response=TerrainResponse(dirt_gain=0.95))
        w = generate_world(spec)
        rng = np.random.default_rng(2)
        draws = np.array([ground_truth_speed(w, (5.0, 5.0), 4.0, rng) for _ in range(10_000)])
        assert draws.mean() == pytest.approx(3.8, abs=0.02)
        assert draws.std() == pytest.approx(0.1, abs=0.005)
        hist, _ = np.histogram(draws, bins=np.arange(3.3, 4.35, 0.1))
        peak = int(hist.argmax())
        assert np.all(np.diff(hist[: peak + 1]) > 0) and np.all(np.diff(hist[peak:]) < 0)

    def test_clamped(self):
        w = dirt_world()
        rng = np.random.default_rng(3)
        draws = [ground_truth_speed(w, (5.0, 5.0), c, rng) for c in np.linspace(0, 5, 200)]
        assert min(draws) >= 0.0 and max(draws) <= w.response.s_max

    def test_outside_rejected(self):
        with pytest.raises(ParameterError):
            ground_truth_speed(dirt_world(), (-1.0, 0.0), 1.0, np.random.default_rng(0))

    def test_vegetation_low_mass_matches_area(self, train_world):
        w = train_world
        rng = np.random.default_rng(4)
        xs = rng.uniform(0, w.extent[0], 60_000)
        ys = rng.uniform(0, w.extent[1], 60_000)
        veg = w.class_at(xs, ys) == VEGETATION
        stuck = w.in_solid_bush(xs[veg], ys[veg]).mean()
        area = solid_vegetation_fraction(w)
        assert stuck == pytest.approx(area, abs=0.01)
        # overlapping disks make the covered share a little below density * area * q
        nominal = w.spec.bush_density * math.pi * np.mean(w.bush_r**2) * w.spec.q_solid
        assert 0.5 * nominal < area <= nominal * 1.05

    def test_generative_pmf_matches_sampling(self, train_world):
        w = train_world
        rng = np.random.default_rng(5)
        cmds = rng.uniform(4.0, 5.0, 4000)
        pmf = generative_pmf(w, DIRT, cmds)
        gain, noise = w.response.dirt_gain, w.response.dirt_noise
        sampled = np.clip(gain * cmds + noise * rng.standard_normal(cmds.size), 0, 5)
        hist = np.bincount(np.minimum((sampled / 0.5).astype(int), 9), minlength=10) / cmds.size
        assert 0.5 * np.abs(pmf - hist).sum() < 0.03
        veg = generative_pmf(w, VEGETATION, cmds, stuck_probability=0.2)
        assert veg.sum() == pytest.approx(1.0) and veg[0] == pytest.approx(0.2, abs=1e-3)


class TestCollection:
    def test_sample_count(self, train_world):
        data = collect_dataset(train_world, 180.0, np.random.default_rng(0))
        assert len(data) == 9000
        n_veg = sum(s.terrain_class == VEGETATION for s in data)
        assert 0.5 * len(data) < n_veg < 0.95 * len(data)

    def test_no_vegetation(self):
        data = collect_dataset(dirt_world(), 20.0, np.random.default_rng(1))
        assert data and all(s.terrain_class == DIRT for s in data)

    def test_seeded(self, train_world):
        a = collect_dataset(train_world, 10.0, np.random.default_rng(2))
        b = collect_dataset(train_world, 10.0, np.random.default_rng(2))
        assert a == b

    @pytest.mark.parametrize("duration", [0.0, -1.0])
    def test_bad_duration(self, train_world, duration):
        with pytest.raises(ParameterError):
            collect_dataset(train_world, duration, np.random.default_rng(0))

    def test_commands_in_range(self, train_world):
        data = collect_dataset(train_world, 30.0, np.random.default_rng(3))
        cmd = np.array([s.commanded_speed for s in data])
        real = np.array([s.realized_speed for s in data])
        assert cmd.min() >= 0 and cmd.max() <= 5 and real.min() >= 0 and real.max() <= 5

    def test_learned_matches_generative(self, train_world):
        data = collect_dataset(train_world, 180.0, np.random.default_rng(0))
        model = train(data, TrainConfig(seed=0), n_classes=2)
        from travspeed.model import encode, forward

        cls = np.array([s.terrain_class for s in data])
        cmd = np.array([s.commanded_speed for s in data])
        layer = np.minimum((cmd * 2).astype(int), 9)
        checked = 0
        for c in (DIRT, VEGETATION):
            for k in range(10):
                sel = (cls == c) & (layer == k)
                if sel.sum() < 200:
                    continue
                model_pmf = forward(model, encode(model, cls[sel], cmd[sel])).mean(axis=0)
                tv = 0.5 * np.abs(model_pmf - generative_pmf(train_world, c, cmd[sel])).sum()
                assert tv <= 0.12, (c, k, tv)
                checked += 1
        assert checked >= 12
        # the histogram helper sees the same cells
        assert histogram_estimate(data, VEGETATION, 9).probs[0] > 0


class TestContact:
    def test_inward_blocked_outward_free(self):
        w = single_bush_world(solid=True)
        cfg = MppiConfig()
        plant = make_plant(w, cfg, np.random.default_rng(0))
        forward_u = Control(10.0, 10.0)
        inside_facing_in = RobotState(9.5, 5.0, 0.0, 0.0)  # left of center, heading +x
        after = plant(inside_facing_in, forward_u, cfg.dt)
        assert (after.x, after.y) == (9.5, 5.0) and after.speed == 0.0
        inside_facing_out = RobotState(9.5, 5.0, math.pi, 0.0)
        after = plant(inside_facing_out, forward_u, cfg.dt)
        assert after.x < 9.5 and after.speed > 0

    def test_glancing_contact_only_backs_out(self):
        w = single_bush_world(solid=True)
        cfg = MppiConfig()
        plant = make_plant(w, cfg, np.random.default_rng(0))
        s = RobotState(9.0, 5.8, 0.0, 0.0)  # passes 0.8 m above the center, heading +x
        for _ in range(10):
            s = plant(s, Control(5.0, 5.0), cfg.dt)
        assert w.solid_bush_at(s.x, s.y) == 0
        stuck_at = (s.x, s.y)
        # facing +y the step leaves the center but does not retrace the entry: blocked
        up = plant(RobotState(s.x, s.y, math.pi / 2, 0.0), Control(5.0, 5.0), cfg.dt)
        assert (up.x, up.y) == stuck_at and up.speed == 0.0
        back = plant(s, Control(-5.0, -5.0), cfg.dt)
        assert back.x < stuck_at[0] and back.speed > 0

    def test_turning_in_place_allowed(self):
        w = single_bush_world(solid=True)
        cfg = MppiConfig()
        plant = make_plant(w, cfg, np.random.default_rng(0))
        s = plant(RobotState(9.5, 5.0, 0.0, 0.0), Control(-5.0, 5.0), cfg.dt)
        assert s.heading > 0 and (s.x, s.y) == (9.5, 5.0)

    def test_soft_bush_passes(self):
        w = single_bush_world(solid=False)
        cfg = MppiConfig()
        plant = make_plant(w, cfg, np.random.default_rng(0))
        s = RobotState(9.5, 5.0, 0.0, 0.0)
        for _ in range(10):
            s = plant(s, Control(10.0, 10.0), cfg.dt)
        assert s.x > 10.5

    def test_border_blocks(self):
        w = dirt_world()
        cfg = MppiConfig()
        plant = make_plant(w, cfg, np.random.default_rng(0))
        s = plant(RobotState(0.05, 5.0, math.pi, 0.0), Control(16.0, 16.0), cfg.dt)
        assert s.x == 0.05

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-math.pi, math.pi), st.floats(0.05, 0.95), st.floats(-math.pi, math.pi))
    def test_never_deeper_inside_solid(self, heading, frac, where):
        w = single_bush_world(solid=True)
        cfg = MppiConfig()
        plant = make_plant(w, cfg, np.random.default_rng(0))
        x, y = 10.0 + frac * math.cos(where), 5.0 + frac * math.sin(where)
        s = plant(RobotState(x, y, heading, 0.0), Control(12.0, 8.0), cfg.dt)
        assert math.hypot(s.x - 10.0, s.y - 5.0) >= math.hypot(x - 10.0, y - 5.0) - 1e-12


class TestTrials:
    def test_long_dirt_leg(self, dirt_model):
        w = dirt_world(extent=(45.0, 12.0))
        r = run_trial(w, (3.0, 6.0), (41.0, 6.0), dirt_model, RiskParams(0.1, 0.0), seed=0)
        assert r.success and r.time_to_goal < 15.0
        assert r.failure_mode == "none" and r.vegetation_distance == 0.0
        assert math.hypot(r.path[-1, 0] - 41.0, r.path[-1, 1] - 6.0) <= 3.0

    def test_start_in_solid_bush_times_out(self, dirt_model):
        w = single_bush_world(solid=True, radius=1.5)
        trial = TrialConfig(max_time=4.0)
        r = run_trial(w, (9.0, 5.0), (18.0, 5.0), dirt_model, RiskParams(0.1, 0.0), trial=trial, seed=1)
        assert not r.success and r.failure_mode == "timeout" and r.time_to_goal is None
        assert np.allclose(r.path, [9.0, 5.0])

    def test_deterministic(self, dirt_model):
        w = dirt_world(extent=(30.0, 12.0))
        trial = TrialConfig(max_time=3.0)
        a = run_trial(w, (3.0, 6.0), (27.0, 6.0), dirt_model, RiskParams(), trial=trial, seed=7)
        b = run_trial(w, (3.0, 6.0), (27.0, 6.0), dirt_model, RiskParams(), trial=trial, seed=7)
        assert np.array_equal(a.path, b.path) and a.elapsed == b.elapsed


class TestBenchmark:
    def small(self, dirt_model, jobs=1):
        w = dirt_world(extent=(30.0, 12.0))
        pairs = [((3.0, 6.0), (16.0, 6.0))]
        trial = TrialConfig(max_time=4.0)
        mppi = MppiConfig(n_rollouts=100, horizon_steps=40, burn_in_iterations=20)
        return benchmark(w, pairs, [0.0, 0.5], 2, dirt_model, mppi=mppi, trial=trial, seed=3, jobs=jobs)

    def test_rows_and_csv(self, dirt_model, tmp_path):
        rows, records = self.small(dirt_model)
        assert [r.beta for r in rows] == [0.0, 0.5] and all(r.n_trials == 2 for r in rows)
        assert len(records) == 4
        for r in rows:
            assert r.success_rate == r.n_success / r.n_trials
        save_benchmark(rows, tmp_path / "b.csv")
        assert (tmp_path / "b.csv").read_text().splitlines()[0] == ",".join(BENCHMARK_HEADER)

    def test_jobs_do_not_change_results(self, dirt_model, tmp_path):
        serial, _ = self.small(dirt_model, jobs=1)
        parallel, _ = self.small(dirt_model, jobs=2)
        save_benchmark(serial, tmp_path / "a.csv")
        save_benchmark(parallel, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_rejects_empty(self, dirt_model):
        with pytest.raises(ParameterError):
            benchmark(dirt_world(), [], [0.0], 1, dirt_model)


class TestSpecFile:
    def test_round_trip(self, tmp_path):
        spec = benchmark_world_spec()
        save_world_spec(spec, tmp_path / "w.json")
        assert load_world_spec(tmp_path / "w.json") == spec

    def test_partial_spec_uses_defaults(self, tmp_path):
        (tmp_path / "w.json").write_text(json.dumps({"seed": 9, "q_solid": 0.5}))
        spec = load_world_spec(tmp_path / "w.json")
        assert spec.seed == 9 and spec.q_solid == 0.5 and spec.extent == WorldSpec().extent

    def test_unknown_field(self, tmp_path):
        (tmp_path / "w.json").write_text(json.dumps({"sede": 1}))
        with pytest.raises(FormatError, match="sede"):
            load_world_spec(tmp_path / "w.json")

    def test_bad_value(self, tmp_path):
        (tmp_path / "w.json").write_text(json.dumps({"q_solid": 3}))
        with pytest.raises(FormatError, match="q_solid"):
            load_world_spec(tmp_path / "w.json")

    def test_bad_json(self, tmp_path):
        (tmp_path / "w.json").write_text("{")
        with pytest.raises(FormatError, match="line 1"):
            load_world_spec(tmp_path / "w.json")
