import math

import numpy as np
import pytest

from chargetime.physics import (
    ChargingScenario,
    DomainError,
    PhysicsParams,
    VehicleSpec,
    actual_power,
    degraded_limits,
    effective_capacity,
    effective_max_power,
    pack_voltage,
    taper_factor,
    temperature_efficiency,
    vehicle_power_acceptance,
)


class TestEffectiveCapacity:
    def test_identity_at_full_health(self):
        assert effective_capacity(75.0, 1.0) == 75.0

    def test_direct_evaluation(self):
        assert effective_capacity(100.0, 0.7) == pytest.approx(70.0)
        assert effective_capacity(60.0, 0.85) == pytest.approx(51.0)

    def test_rejects_bad_inputs(self):
        with pytest.raises(DomainError):
            effective_capacity(-5.0, 0.9)
        with pytest.raises(DomainError):
            effective_capacity(75.0, 0.0)
        with pytest.raises(DomainError):
            effective_capacity(75.0, 1.2)


class TestEffectiveMaxPower:
    def test_identity_at_full_health(self):
        assert effective_max_power(150.0, 1.0) == pytest.approx(150.0)

    def test_direct_evaluation(self):
        assert effective_max_power(150.0, 0.7) == pytest.approx(143.25)

    def test_floor_asymptote(self):
        # soh -> 0 is rejected as input but the formula's floor is 0.85*p_nom
        assert 50.0 * (0.85 + 0.15 * 0.0) == pytest.approx(42.5)
        with pytest.raises(DomainError):
            effective_max_power(50.0, 0.0)

    def test_linear_in_soh_and_floored(self, rng):
        for _ in range(100):
            p_nom = rng.uniform(10, 300)
            s1, s2 = sorted(rng.uniform(0.01, 1.0, size=2))
            lo, hi = effective_max_power(p_nom, s1), effective_max_power(p_nom, s2)
            assert lo <= hi
            assert lo >= 0.85 * p_nom


class TestTaperFactor:
    def test_boundary_value(self):
        assert taper_factor(0.8, PhysicsParams(k_taper=10.0)) == pytest.approx(1.0)

    def test_e_minus_one(self):
        assert taper_factor(0.9, PhysicsParams(k_taper=10.0)) == pytest.approx(
            math.exp(-1.0), rel=1e-9)
        assert taper_factor(0.9, PhysicsParams(k_taper=10.0)) == pytest.approx(0.36788, abs=1e-5)

    def test_cc_region_is_one(self):
        for k in (5.0, 10.0, 15.0):
            assert taper_factor(0.5, PhysicsParams(k_taper=k)) == 1.0

    def test_continuity_at_knot(self):
        p = PhysicsParams(k_taper=15.0)
        eps = 1e-9
        assert abs(taper_factor(0.8 - eps, p) - taper_factor(0.8 + eps, p)) < 1e-7

    def test_strictly_decreasing_in_cv(self):
        p = PhysicsParams(k_taper=7.0)
        s = np.linspace(0.8, 1.0, 101)
        vals = taper_factor(s, p)
        assert np.all(np.diff(vals) < 0)

    def test_domain(self):
        with pytest.raises(DomainError):
            taper_factor(1.3)


class TestTemperatureEfficiency:
    def test_reference_temperature(self):
        assert temperature_efficiency(25.0) == 1.0

    def test_cold_side(self):
        assert temperature_efficiency(-10.0) == pytest.approx(1 - 0.006 * 35)
        assert temperature_efficiency(-10.0) == pytest.approx(0.79)

    def test_warm_side(self):
        assert temperature_efficiency(40.0) == pytest.approx(0.955)

    def test_monotone_away_from_reference(self):
        temps = np.linspace(-40, 25, 50)
        vals = [temperature_efficiency(t) for t in temps]
        assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))
        temps = np.linspace(25, 60, 50)
        vals = [temperature_efficiency(t) for t in temps]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_floors(self):
        # the linear parts stay above their floors across the whole domain
        assert temperature_efficiency(-40.0) == pytest.approx(0.61)
        assert temperature_efficiency(-40.0) >= 0.6
        assert temperature_efficiency(60.0) == pytest.approx(0.895)
        assert temperature_efficiency(60.0) >= 0.8

    def test_domain(self):
        with pytest.raises(DomainError):
            temperature_efficiency(-41.0)
        with pytest.raises(DomainError):
            temperature_efficiency(61.0)


class TestVehiclePowerAcceptance:
    def test_all_factors_one(self, mid_vehicle):
        assert vehicle_power_acceptance(0.5, 1.0, 25.0, mid_vehicle) == pytest.approx(150.0)

    def test_cv_taper(self, mid_vehicle):
        got = vehicle_power_acceptance(0.9, 1.0, 25.0, mid_vehicle,
                                       PhysicsParams(k_taper=10.0))
        assert got == pytest.approx(150.0 * math.exp(-1.0), rel=1e-9)
        assert got == pytest.approx(55.18, abs=0.01)

    def test_soh_derating_only(self, mid_vehicle):
        assert vehicle_power_acceptance(0.5, 0.7, 25.0, mid_vehicle) == pytest.approx(143.25)

    def test_monotone_in_soh(self, mid_vehicle, rng):
        for _ in range(50):
            s = rng.uniform(0, 1)
            t = rng.uniform(-10, 40)
            s1, s2 = sorted(rng.uniform(0.1, 1.0, size=2))
            assert (vehicle_power_acceptance(s, s1, t, mid_vehicle)
                    <= vehicle_power_acceptance(s, s2, t, mid_vehicle) + 1e-12)


class TestActualPower:
    def test_station_limited(self, mid_vehicle):
        sc = ChargingScenario(0.2, 0.9, 50.0, 1.0, 25.0, mid_vehicle)
        assert actual_power(0.5, sc) == pytest.approx(50.0)

    def test_acceptance_limited(self, mid_vehicle):
        sc = ChargingScenario(0.2, 0.95, 150.0, 1.0, 25.0, mid_vehicle)
        assert actual_power(0.9, sc, PhysicsParams(k_taper=10.0)) == pytest.approx(
            150.0 * math.exp(-1.0), rel=1e-9)

    def test_cable_limited(self):
        spec = VehicleSpec(c_bat_nom=75, p_max_nom=150, v_nom=400, p_cable=120)
        sc = ChargingScenario(0.2, 0.9, 150.0, 1.0, 25.0, spec)
        assert actual_power(0.5, sc) == pytest.approx(120.0)

    def test_monotone_in_caps(self, mid_vehicle, rng):
        # lowering any cap never raises delivered power
        for _ in range(50):
            s = rng.uniform(0, 1)
            hi = ChargingScenario(0.1, 0.9, 150.0, 1.0, 25.0, mid_vehicle)
            lo = ChargingScenario(0.1, 0.9, 50.0, 1.0, 25.0, mid_vehicle)
            assert actual_power(s, lo) <= actual_power(s, hi) + 1e-12


class TestPackVoltage:
    def test_midpoint(self, mid_vehicle):
        assert pack_voltage(0.5, mid_vehicle) == pytest.approx(400.0)

    def test_endpoints(self, mid_vehicle):
        assert pack_voltage(1.0, mid_vehicle) == pytest.approx(440.0)
        assert pack_voltage(0.0, mid_vehicle) == pytest.approx(360.0)

    def test_default_beta(self, mid_vehicle):
        assert mid_vehicle.beta == pytest.approx(0.2 * 400.0)


class TestValidation:
    def test_scenario_window(self, mid_vehicle):
        with pytest.raises(DomainError):
            ChargingScenario(0.8, 0.8, 50.0, 1.0, 25.0, mid_vehicle)
        with pytest.raises(DomainError):
            ChargingScenario(0.9, 0.2, 50.0, 1.0, 25.0, mid_vehicle)

    def test_vehicle_positivity(self):
        with pytest.raises(DomainError):
            VehicleSpec(c_bat_nom=0.0, p_max_nom=150, v_nom=400, p_cable=250)

    def test_params_ranges(self):
        with pytest.raises(DomainError):
            PhysicsParams(k_taper=4.0)
        with pytest.raises(DomainError):
            PhysicsParams(s_cv=1.0)

    def test_degraded_limits_bundle(self, mid_vehicle):
        lim = degraded_limits(mid_vehicle, 0.8)
        assert lim.c_bat_eff == pytest.approx(60.0)
        assert lim.p_max_eff == pytest.approx(150.0 * 0.97)
