"""Handling-envelope constraint tests."""

import math

import numpy as np
import pytest

from gcmpc.envelope import build_constraints, max_yaw_rate
from gcmpc.tires import TireParams, TireUncertaintySet
from gcmpc.vehicle import VehicleParams, normal_loads


class TestMaxYawRate:
    def test_benchmark_value(self, vehicle):
        # (9.81/10) * (1.07*1.40 + 1.40^2) / (1.07 * 2.47), frozen
        r = max_yaw_rate(vehicle, 1.0, 10.0)
        assert r == pytest.approx(1.283551401869159, rel=1e-12)

    def test_symmetric_wheelbase(self):
        m, g, a = 1500.0, 9.81, 1.25
        fz = m * g / 2
        tires = TireUncertaintySet(TireParams(1e5, 0.8, 1.0, fz), (0, 0, 0))
        vp = VehicleParams(m, 2000.0, a, a, tires, tires)
        assert max_yaw_rate(vp, 0.9, 12.0) == pytest.approx(0.9 * g / 12.0, rel=1e-12)

    def test_speed_scaling(self, vehicle):
        assert max_yaw_rate(vehicle, 1.0, 20.0) == pytest.approx(
            0.5 * max_yaw_rate(vehicle, 1.0, 10.0), rel=1e-12)

    def test_monotonicity(self, vehicle):
        speeds = np.linspace(5, 40, 15)
        vals = [max_yaw_rate(vehicle, 1.0, v) for v in speeds]
        assert all(x > y for x, y in zip(vals, vals[1:]))
        mus = np.linspace(0.3, 1.2, 10)
        vals = [max_yaw_rate(vehicle, mu, 15.0) for mu in mus]
        assert all(x < y for x, y in zip(vals, vals[1:]))

    def test_gravity_switch(self, vehicle):
        with_g = max_yaw_rate(vehicle, 1.0, 10.0, use_gravity=True)
        without = max_yaw_rate(vehicle, 1.0, 10.0, use_gravity=False)
        assert with_g == pytest.approx(9.81 * without, rel=1e-12)

    def test_rejects_nonpositive_speed(self, vehicle):
        with pytest.raises(ValueError):
            max_yaw_rate(vehicle, 1.0, -1.0)


class TestBuildConstraints:
    @pytest.fixture(scope="class")
    def cons(self, vehicle, envelopes):
        env_f, env_r = envelopes
        return build_constraints(vehicle, env_f, env_r, 1.0, 10.0)

    def test_sparsity(self, cons, vehicle):
        b = vehicle.dist_rear
        expect_M = np.zeros((6, 6))
        expect_M[0, 3], expect_M[0, 4] = 1.0, -b
        expect_M[1, 3], expect_M[1, 4] = -1.0, b
        expect_M[2, 4], expect_M[3, 4] = 1.0, -1.0
        np.testing.assert_array_equal(cons.M, expect_M)
        np.testing.assert_array_equal(cons.N.ravel(), [0, 0, 0, 0, 1, -1])

    def test_row_symmetry(self, cons):
        np.testing.assert_array_equal(cons.M[1], -cons.M[0])
        np.testing.assert_array_equal(cons.M[3], -cons.M[2])
        assert cons.N[5, 0] == -cons.N[4, 0]

    def test_slip_rows(self, cons, vehicle, envelopes):
        _, env_r = envelopes
        want = 10.0 * math.tan(env_r.peak_slip)
        assert cons.o[0] == pytest.approx(want, rel=1e-12)
        assert cons.o[1] == pytest.approx(want, rel=1e-12)
        assert cons.alpha_r_peak == env_r.peak_slip

    def test_force_rows(self, cons, vehicle):
        fzf, _ = normal_loads(vehicle)
        assert cons.o[4] == pytest.approx(fzf, rel=1e-12)  # mu = 1
        assert cons.o[4] == pytest.approx(6844.758704453442, rel=1e-12)

    def test_origin_strictly_feasible(self, cons):
        x = np.array([0, 0, 0, 0, 0, 1.0])
        vals = cons.M @ x + cons.N.ravel() * 0.0
        assert np.all(vals < cons.o)
        assert np.all(cons.o > 0)

    def test_boundary_state_slip_angle(self, cons, vehicle, envelopes):
        # a state on the slip row boundary has rear slip = alpha_r_peak in
        # tan space, atan of the gap stays within the tan-vs-identity error
        _, env_r = envelopes
        v_x, b = 10.0, vehicle.dist_rear
        r = 0.2
        v_y = cons.o[0] + b * r     # makes v_y - b r sit on the bound
        alpha = math.atan((v_y - b * r) / v_x)
        assert alpha == pytest.approx(env_r.peak_slip, abs=abs(math.tan(env_r.peak_slip) - env_r.peak_slip))

    def test_conservative_slip_option(self, vehicle, envelopes):
        env_f, env_r = envelopes
        strict = build_constraints(vehicle, env_f, env_r, 1.0, 10.0,
                                   conservative_slip=True)
        default = build_constraints(vehicle, env_f, env_r, 1.0, 10.0)
        assert strict.alpha_r_peak <= default.alpha_r_peak
        assert strict.o[0] <= default.o[0]
