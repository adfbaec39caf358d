import math

import numpy as np
import pytest

from lagflow.fields import Grid3, gradient, to_real
from lagflow.flow import FrozenFieldDrift, integrate_flow, lattice_positions
from lagflow.forcing import zero_path
from lagflow.solver import make_initial_data
from lagflow.weights import (
    FlowWeight,
    WeightField,
    asymmetric_weight,
    check_flow_lipschitz,
    dyadic_radii_cells,
    flow_weight,
    maximal_function,
    stein_maximal,
    survival_tail_slope,
    verify_asymmetric,
    weak_l3_quasinorm,
    weak_tail_check,
)

GRID = Grid3(16, 1.0)


@pytest.fixture(scope="module")
def tg_field():
    return make_initial_data("taylor_green", GRID, {"amplitude": 1.0})


class TestWeightTypes:
    def test_weight_field_validation(self):
        with pytest.raises(ValueError):
            WeightField(GRID, -np.ones((16, 16, 16)))
        with pytest.raises(ValueError):
            WeightField(GRID, np.ones((8, 8, 8)))

    def test_flow_weight_validation(self):
        with pytest.raises(ValueError):
            FlowWeight(np.array([-1.0]))


class TestMaximalFunction:
    def test_dyadic_radii(self):
        assert dyadic_radii_cells(16) == [1, 2, 4]
        assert dyadic_radii_cells(64) == [1, 2, 4, 8, 16]

    def test_dominates_pointwise(self):
        rng = np.random.default_rng(0)
        f = rng.standard_normal((16, 16, 16))
        M = maximal_function(f, GRID)
        assert np.all(M.values >= np.abs(f) - 1e-12)

    def test_constant_is_fixed_point(self):
        M = maximal_function(3.0 * np.ones((16, 16, 16)), GRID)
        np.testing.assert_allclose(M.values, 3.0, atol=1e-12)

    def test_homogeneity(self):
        rng = np.random.default_rng(1)
        f = rng.standard_normal((16, 16, 16))
        M1 = maximal_function(f, GRID).values
        M2 = maximal_function(5.0 * f, GRID).values
        np.testing.assert_allclose(M2, 5.0 * M1, rtol=1e-12)

    def test_spreads_point_mass(self):
        f = np.zeros((16, 16, 16))
        f[8, 8, 8] = 1.0
        M = maximal_function(f, GRID).values
        # neighbor is covered by the radius-1 ball (7 nodes): average 1/7
        assert M[9, 8, 8] == pytest.approx(1.0 / 7.0, rel=1e-12)
        assert M[8, 8, 8] == pytest.approx(1.0)


class TestSteinMaximal:
    def test_dominates_gradient_magnitude(self, tg_field):
        grad = gradient(tg_field)
        g = stein_maximal(grad)
        assert np.all(g.values >= grad.magnitude() - 1e-12)

    def test_constant_gradient_magnitude(self):
        # |grad b| constant: every local ratio is bounded by that constant
        mag = 2.0 * np.ones((16, 16, 16))
        g = stein_maximal(mag, GRID)
        np.testing.assert_allclose(g.values, 2.0, rtol=1e-10)


class TestAsymmetricWeight:
    def test_pointwise_violations_rare(self, tg_field):
        h, c = asymmetric_weight(tg_field, pair_count=20_000, seed=0)
        assert c > 0
        rep = verify_asymmetric(tg_field, h, pair_count=50_000, seed=1)
        assert rep["violation_fraction"] < 1e-3

    def test_given_constant_respected(self, tg_field):
        h1, c = asymmetric_weight(tg_field, pair_count=5_000, seed=0)
        h2, c2 = asymmetric_weight(tg_field, c_fit=2.0 * c, pair_count=5_000, seed=0)
        assert c2 == 2.0 * c
        np.testing.assert_allclose(h2.values, 2.0 * h1.values, rtol=1e-12)

    def test_zero_field(self):
        u = make_initial_data("shear", GRID, {"amplitude": 0.0})
        h, c = asymmetric_weight(u, pair_count=100, seed=0)
        assert np.all(h.values == 0.0)


class TestFlowWeight:
    def test_constant_weight_integrates_to_hT(self):
        drift = FrozenFieldDrift(make_initial_data("shear", GRID, {"amplitude": 1.0}))
        ens = integrate_flow(drift, zero_path(1.0, 0.1), lattice_positions(4, 1.0),
                             1.0, "rk4", 0.1, m=4)
        h = WeightField(GRID, 2.0 * np.ones((16, 16, 16)))
        H = flow_weight([(t, h) for t in ens.times], ens)
        np.testing.assert_allclose(H.values, 2.0, rtol=1e-12)

    def test_misaligned_times_rejected(self):
        drift = FrozenFieldDrift(make_initial_data("shear", GRID, {"amplitude": 1.0}))
        ens = integrate_flow(drift, zero_path(1.0, 0.1), lattice_positions(4, 1.0),
                             1.0, "rk4", 0.1, m=4)
        h = WeightField(GRID, np.ones((16, 16, 16)))
        with pytest.raises(ValueError):
            flow_weight([(t + 0.5, h) for t in ens.times], ens)


class TestFlowLipschitz:
    def test_zero_drift_no_violations(self):
        u = make_initial_data("shear", GRID, {"amplitude": 0.0})
        ens = integrate_flow(FrozenFieldDrift(u), zero_path(1.0, 0.1),
                             lattice_positions(8, 1.0), 1.0, "rk4", 0.1, m=8)
        H = FlowWeight(np.zeros(ens.count))
        rep = check_flow_lipschitz(ens, H, pair_count=2_000, seed=0)
        assert rep["violations"] == 0
        assert rep["worst_ratio"] == pytest.approx(1.0, abs=1e-9)

    def test_needs_lattice(self):
        ens_pts = np.random.default_rng(0).uniform(0, 1, (10, 3))
        u = make_initial_data("shear", GRID, {"amplitude": 0.0})
        ens = integrate_flow(FrozenFieldDrift(u), zero_path(0.1, 0.05), ens_pts,
                             0.1, "rk4", 0.05)
        with pytest.raises(ValueError):
            check_flow_lipschitz(ens, FlowWeight(np.zeros(10)))


class TestWeakTail:
    def test_indicator_quasinorm(self):
        v = np.zeros(1000)
        v[:27] = 2.0
        # sup at level just below 2: measure 27/1000 of the box
        expect = 2.0 * (27 / 1000) ** (1.0 / 3.0)
        assert weak_l3_quasinorm(v, 1.0) == pytest.approx(expect, rel=1e-12)

    def test_zero(self):
        assert weak_l3_quasinorm(np.zeros(10), 1.0) == 0.0

    def test_tail_check_ratio(self):
        H = FlowWeight(np.ones(100))
        rep = weak_tail_check(H, budget=2.0, box_volume=1.0)
        assert rep["ratio"] == pytest.approx(rep["weak_l3"] / 2.0)

    def test_survival_slope_power_law(self):
        # P(V > a) = a^-3 for V = U^(-1/3): the fitted slope is -3
        rng = np.random.default_rng(4)
        v = rng.uniform(size=200_000) ** (-1.0 / 3.0)
        slope = survival_tail_slope(v)
        assert slope == pytest.approx(-3.0, abs=0.15)

    def test_survival_slope_needs_data(self):
        with pytest.raises(ValueError):
            survival_tail_slope(np.ones(10))
