import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cvar_trapezoid, var_by_cdf_inversion
from travspeed.errors import ParameterError
from travspeed.risk import (
    GridGeometry,
    RiskParams,
    RiskSpeedMap,
    SpeedDistributionMap,
    SpeedPmf,
    build_risk_map,
    cvar,
    lookup,
    pmf_mean,
    risk_adjusted_speed,
    value_at_risk,
)

BIMODAL = SpeedPmf.from_mass({0: 0.25, 8: 0.75})


def pmfs(n_bins=10):
    return st.lists(
        st.floats(0.0, 1.0, allow_nan=False), min_size=n_bins, max_size=n_bins
    ).filter(lambda xs: sum(xs) > 1e-3).map(lambda xs: SpeedPmf(np.array(xs) / sum(xs)))


alphas = st.floats(1e-4, 1.0)


class TestSpeedPmf:
    def test_rejects_negative_mass(self):
        with pytest.raises(ParameterError):
            SpeedPmf(np.array([1.2, -0.2]))

    def test_rejects_bad_sum(self):
        with pytest.raises(ParameterError):
            SpeedPmf(np.array([0.5, 0.4]))

    def test_rejects_nonpositive_smax(self):
        with pytest.raises(ParameterError):
            SpeedPmf(np.array([1.0]), s_max=0.0)

    def test_accepts_sum_within_tolerance(self):
        p = SpeedPmf(np.array([0.5, 0.5 + 5e-7]))
        assert cvar(p, 1.0) == pytest.approx(pmf_mean(p), abs=1e-9)


class TestMean:
    def test_single_bin_center(self):
        assert pmf_mean(SpeedPmf.point(4)) == pytest.approx(2.25, abs=1e-12)

    def test_bimodal(self):
        assert pmf_mean(BIMODAL) == pytest.approx(3.25, abs=1e-12)

    def test_uniform(self):
        assert pmf_mean(SpeedPmf.uniform()) == pytest.approx(2.5, abs=1e-12)


class TestValueAtRisk:
    def test_bimodal_low_tail(self):
        assert value_at_risk(BIMODAL, 0.1) == pytest.approx(0.2, abs=1e-12)

    def test_bimodal_matches_cdf_inversion_oracle(self):
        expected = var_by_cdf_inversion(BIMODAL.probs, 5.0, 0.1)
        assert value_at_risk(BIMODAL, 0.1) == pytest.approx(expected, abs=5e-5)

    def test_alpha_one_is_top_of_highest_occupied_bin(self):
        assert value_at_risk(BIMODAL, 1.0) == pytest.approx(4.5)
        assert value_at_risk(SpeedPmf.uniform(), 1.0) == pytest.approx(5.0)

    def test_single_bin_median(self):
        assert value_at_risk(SpeedPmf.point(4), 0.5) == pytest.approx(2.25)

    def test_flat_cdf_jumps_to_next_occupied_bin(self):
        # cdf sits at 0.25 from 0.5 m/s up to 4.0 m/s; the max-convention picks 4.0
        assert value_at_risk(BIMODAL, 0.25) == pytest.approx(4.0)

    @pytest.mark.parametrize("alpha", [0.0, -0.1, 1.01, math.nan])
    def test_rejects_bad_alpha(self, alpha):
        with pytest.raises(ParameterError):
            value_at_risk(BIMODAL, alpha)

    @given(pmfs(), alphas, alphas)
    def test_monotone_in_alpha(self, pmf, a, b):
        lo, hi = sorted((a, b))
        assert value_at_risk(pmf, lo) <= value_at_risk(pmf, hi) + 1e-12

    @given(pmfs(), alphas)
    def test_in_range(self, pmf, a):
        assert 0.0 <= value_at_risk(pmf, a) <= pmf.s_max


class TestCvar:
    def test_alpha_one_equals_mean(self):
        for pmf in (BIMODAL, SpeedPmf.uniform(), SpeedPmf.point(7)):
            assert cvar(pmf, 1.0) == pytest.approx(pmf_mean(pmf), abs=1e-12)

    def test_bimodal(self):
        assert cvar(BIMODAL, 0.1) == pytest.approx(0.1, abs=1e-12)
        assert cvar_trapezoid(BIMODAL.probs, 5.0, 0.1) == pytest.approx(0.1, abs=1e-9)

    def test_single_bin(self):
        assert cvar(SpeedPmf.point(4), 0.1) == pytest.approx(2.025, abs=1e-12)
        assert cvar_trapezoid(SpeedPmf.point(4).probs, 5.0, 0.1) == pytest.approx(2.025, abs=1e-9)

    def test_rejects_bad_alpha(self):
        with pytest.raises(ParameterError):
            cvar(BIMODAL, 0.0)

    @settings(max_examples=200)
    @given(pmfs(), alphas, alphas)
    def test_monotone_in_alpha(self, pmf, a, b):
        lo, hi = sorted((a, b))
        assert cvar(pmf, lo) <= cvar(pmf, hi) + 1e-12

    @given(pmfs(), alphas)
    def test_bounded_by_mean(self, pmf, a):
        assert 0.0 <= cvar(pmf, a) <= pmf_mean(pmf) + 1e-12

    @given(pmfs(n_bins=9), alphas)
    def test_shift_by_one_bin_adds_bin_width(self, pmf, a):
        shifted = SpeedPmf(np.concatenate([[0.0], pmf.probs]), s_max=5.0)
        base = SpeedPmf(np.concatenate([pmf.probs, [0.0]]), s_max=5.0)
        assert cvar(shifted, a) - cvar(base, a) == pytest.approx(0.5, abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(pmfs(), st.sampled_from([0.05, 0.1, 0.25, 0.5, 1.0]))
    def test_matches_trapezoid_oracle_on_sparse_pmfs(self, pmf, a):
        assert cvar(pmf, a) == pytest.approx(cvar_trapezoid(pmf.probs, pmf.s_max, a), abs=1e-6)


class TestRiskAdjusted:
    def test_endpoints(self):
        assert risk_adjusted_speed(BIMODAL, RiskParams(0.1, 0.0)) == pytest.approx(3.25)
        assert risk_adjusted_speed(BIMODAL, RiskParams(0.1, 1.0)) == pytest.approx(0.1)

    def test_half(self):
        assert risk_adjusted_speed(BIMODAL, RiskParams(0.1, 0.5)) == pytest.approx(1.675, abs=1e-12)

    def test_params_validated(self):
        with pytest.raises(ParameterError):
            RiskParams(0.1, 1.5)
        with pytest.raises(ParameterError):
            RiskParams(0.0, 0.5)

    @given(pmfs(), alphas, st.floats(0, 1), st.floats(0, 1))
    def test_non_increasing_in_beta(self, pmf, a, b1, b2):
        lo, hi = sorted((b1, b2))
        assert risk_adjusted_speed(pmf, RiskParams(a, hi)) <= risk_adjusted_speed(pmf, RiskParams(a, lo)) + 1e-12

    @given(pmfs(), alphas, st.floats(0, 1))
    def test_between_cvar_and_mean(self, pmf, a, b):
        v = risk_adjusted_speed(pmf, RiskParams(a, b))
        assert cvar(pmf, a) - 1e-12 <= v <= pmf_mean(pmf) + 1e-12


class TestLookup:
    geom = GridGeometry(4, 5, 0.5, origin=(-1.0, 2.0))

    def make_map(self):
        values = np.arange(2 * 4 * 5, dtype=float).reshape(2, 4, 5) / 40 * 5
        values[1, 2, 3] = -1.0
        return RiskSpeedMap(values, self.geom, s_max=5.0)

    def test_outside_is_zero(self):
        m = self.make_map()
        assert lookup(m, (-1.01, 2.1), 1.0) == 0.0
        assert lookup(m, (1.5, 2.1), 1.0) == 0.0  # x upper bound is exclusive
        assert lookup(m, (0.0, 4.0), 1.0) == 0.0

    def test_direct_indexing(self):
        m = self.make_map()
        # x=0.3 -> column 2, y=3.2 -> row 2; s=1 -> layer 0 (layers [0, 2.5), [2.5, 5])
        assert lookup(m, (0.3, 3.2), 1.0) == m.values[0, 2, 2]
        assert lookup(m, (0.3, 3.2), 3.0) == m.values[1, 2, 2]

    def test_value_3_1(self):
        values = np.full((10, 1, 1), 1.0)
        values[6, 0, 0] = 3.1
        m = RiskSpeedMap(values, GridGeometry(1, 1, 1.0))
        assert lookup(m, (0.5, 0.5), 3.2) == 3.1

    def test_top_speed_clamps_into_last_layer(self):
        m = self.make_map()
        assert lookup(m, (-0.9, 2.1), 5.0) == m.values[1, 0, 0]
        assert lookup(m, (-0.9, 2.1), 50.0) == m.values[1, 0, 0]

    def test_negative_speed_reads_layer_zero(self):
        m = self.make_map()
        assert lookup(m, (-0.9, 2.1), -3.0) == m.values[0, 0, 0]

    def test_unknown_is_zero(self):
        m = self.make_map()
        assert lookup(m, (0.8, 3.2), 4.0) == 0.0

    def test_rejects_values_above_smax(self):
        with pytest.raises(ParameterError):
            RiskSpeedMap(np.full((1, 1, 1), 6.0), GridGeometry(1, 1, 1.0), s_max=5.0)

    @given(st.floats(-100, 100), st.floats(-100, 100))
    def test_geometry_round_trip(self, x, y):
        g = GridGeometry(50, 40, 0.4, origin=(-8.0, -10.0))
        cell = g.cell_of(x, y)
        if cell is None:
            return
        cx, cy = g.cell_center(*cell)
        assert abs(cx - x) <= g.resolution / 2 + 1e-9
        assert abs(cy - y) <= g.resolution / 2 + 1e-9


class TestBuildRiskMap:
    geom = GridGeometry(2, 3, 1.0)

    def test_single_known_cell(self):
        cells = [[[None, None, None], [None, BIMODAL, None]]]
        sdm = SpeedDistributionMap.from_cells(cells, self.geom)
        rm = build_risk_map(sdm, RiskParams(0.1, 0.5))
        assert rm.values[0, 1, 1] == pytest.approx(1.675, abs=1e-12)
        assert (np.delete(rm.values.ravel(), 4) == -1.0).all()

    def test_all_unknown(self):
        cells = [[[None] * 3, [None] * 3]] * 2
        rm = build_risk_map(SpeedDistributionMap.from_cells(cells, self.geom), RiskParams())
        assert (rm.values == -1.0).all()

    def test_beta_zero_gives_means(self):
        rng = np.random.default_rng(3)
        cells = [[[SpeedPmf(rng.dirichlet(np.ones(10))) for _ in range(3)] for _ in range(2)]]
        sdm = SpeedDistributionMap.from_cells(cells, self.geom)
        rm = build_risk_map(sdm, RiskParams(0.1, 0.0))
        for h in range(2):
            for w in range(3):
                assert rm.values[0, h, w] == pmf_mean(cells[0][h][w])

    def test_equals_per_cell_risk_adjusted_speed(self):
        rng = np.random.default_rng(4)
        cells = [[[SpeedPmf(rng.dirichlet(np.ones(10))) for _ in range(3)] for _ in range(2)]]
        params = RiskParams(0.2, 0.7)
        rm = build_risk_map(SpeedDistributionMap.from_cells(cells, self.geom), params)
        for h in range(2):
            for w in range(3):
                assert rm.values[0, h, w] == risk_adjusted_speed(cells[0][h][w], params)
