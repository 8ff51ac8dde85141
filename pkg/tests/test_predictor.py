import numpy as np
import pytest

from chargetime.features import apply_scaler, engineer_grid
from chargetime.gbm import GBMConfig, fit, predict_batch
from chargetime.physics import ChargingScenario, PhysicsParams, VehicleSpec, actual_power
from chargetime.predictor import (
    IntegrationConfig,
    IntegrationError,
    analytical_power_model,
    linear_baseline_time,
    predict_charging_time,
)


class TestPredictChargingTime:
    def test_constant_model_closed_form(self, mid_vehicle):
        sc = ChargingScenario(0.2, 0.8, 150.0, 1.0, 25.0, mid_vehicle)
        res = predict_charging_time(sc, lambda s: 50.0)
        assert res.t_c == pytest.approx(54.0, rel=1e-12)

    def test_scales_with_soh(self, mid_vehicle):
        sc = ChargingScenario(0.2, 0.8, 150.0, 0.8, 25.0, mid_vehicle)
        res = predict_charging_time(sc, lambda s: 50.0)
        assert res.t_c == pytest.approx(43.2, rel=1e-12)

    def test_station_clamp_dominates(self, mid_vehicle):
        sc = ChargingScenario(0.2, 0.8, 50.0, 1.0, 25.0, mid_vehicle)
        res = predict_charging_time(sc, lambda s: 100.0)
        assert res.t_c == pytest.approx(54.0, rel=1e-12)
        assert np.all(res.power_profile == pytest.approx(50.0))

    def test_grid_and_current_profile(self, mid_vehicle):
        sc = ChargingScenario(0.2, 0.8, 150.0, 1.0, 25.0, mid_vehicle)
        res = predict_charging_time(sc, lambda s: 50.0, IntegrationConfig(n_points=100))
        ds = (0.8 - 0.2) / 100
        assert res.soc_grid[0] == pytest.approx(0.2)
        assert res.soc_grid[-1] == pytest.approx(0.8 - ds)
        v = 400.0 + 80.0 * (res.soc_grid - 0.5)
        assert res.current_profile == pytest.approx(res.power_profile / v)

    def test_resummation_consistency(self, mid_vehicle):
        sc = ChargingScenario(0.1, 0.93, 120.0, 0.85, 5.0, mid_vehicle)
        model = lambda s: actual_power(s, sc, PhysicsParams(k_taper=9.0))
        res = predict_charging_time(sc, model)
        ds = (sc.s_final - sc.s_ini) / len(res.soc_grid)
        c_eff = sc.vehicle.c_bat_nom * sc.soh
        resum = 60.0 * np.sum(c_eff * ds / res.power_profile)
        assert res.t_c == pytest.approx(resum, rel=1e-9)

    def test_nonpositive_power_names_grid_point(self, mid_vehicle):
        sc = ChargingScenario(0.2, 0.8, 150.0, 1.0, 25.0, mid_vehicle)
        bad = lambda s: np.where(s > 0.5, -1.0, 50.0)
        with pytest.raises(IntegrationError, match="s_k=0.5"):
            predict_charging_time(sc, bad)

    def test_refinement_for_smooth_model(self, mid_vehicle):
        sc = ChargingScenario(0.2, 0.9, 150.0, 1.0, 25.0, mid_vehicle)
        model = lambda s: actual_power(s, sc, PhysicsParams(k_taper=10.0))
        t100 = predict_charging_time(sc, model, IntegrationConfig(100)).t_c
        t200 = predict_charging_time(sc, model, IntegrationConfig(200)).t_c
        assert abs(t200 - t100) / t100 < 0.005

    def test_additivity_on_grid_point(self, mid_vehicle):
        model = lambda s: 40.0 + 20.0 * s
        whole = ChargingScenario(0.2, 0.8, 150.0, 1.0, 25.0, mid_vehicle)
        first = ChargingScenario(0.2, 0.5, 150.0, 1.0, 25.0, mid_vehicle)
        second = ChargingScenario(0.5, 0.8, 150.0, 1.0, 25.0, mid_vehicle)
        t_whole = predict_charging_time(whole, model, IntegrationConfig(100)).t_c
        t_split = (predict_charging_time(first, model, IntegrationConfig(50)).t_c
                   + predict_charging_time(second, model, IntegrationConfig(50)).t_c)
        assert t_split == pytest.approx(t_whole, rel=1e-12)

    def test_monotone_in_power(self, mid_vehicle):
        sc = ChargingScenario(0.2, 0.9, 150.0, 1.0, 25.0, mid_vehicle)
        lo = predict_charging_time(sc, lambda s: 40.0).t_c
        hi = predict_charging_time(sc, lambda s: 45.0).t_c
        assert hi < lo


class TestLinearBaseline:
    def test_closed_form(self, mid_vehicle):
        sc = ChargingScenario(0.1, 0.9, 150.0, 1.0, 25.0, mid_vehicle)
        assert linear_baseline_time(sc) == pytest.approx(24.0, rel=1e-12)

    def test_matches_constant_acceptance_model(self, mid_vehicle):
        # pure CC: the quadrature with the constant CC power coincides
        sc = ChargingScenario(0.2, 0.7, 90.0, 0.9, 10.0, mid_vehicle)
        p_cc = actual_power(0.5, sc)
        res = predict_charging_time(sc, lambda s: np.full(np.shape(s), p_cc))
        assert linear_baseline_time(sc) == pytest.approx(res.t_c, rel=1e-12)

    def test_underestimates_cv_sessions(self, mid_vehicle):
        from chargetime.simulator import SimulatorConfig, simulate_session

        sc = ChargingScenario(0.2, 0.95, 150.0, 1.0, 25.0, mid_vehicle)
        trace = simulate_session(sc, SimulatorConfig(noise_sigma=0.0),
                                 PhysicsParams(k_taper=10.0))
        assert linear_baseline_time(sc) < trace.t_c_true


class TestAnalyticalPowerModel:
    @pytest.fixture(scope="class")
    def tiny_ensemble(self, small_dataset):
        from chargetime.features import engineer_matrix, fit_scaler
        from chargetime.simulator import sample_training_rows

        train = small_dataset[0]
        rows = sample_training_rows(train.records, rows_per_session=6, seed=0)
        X_raw = engineer_matrix(rows["s"], rows["soh"], rows["t_amb"], rows["p_station"],
                                rows["c_nom"], rows["p_max_nom"])
        scaler = fit_scaler(X_raw)
        ens = fit(apply_scaler(scaler, X_raw), rows["power_kw"],
                  GBMConfig(m_trees=300, max_depth=6, learning_rate=0.1), scaler=scaler)
        return ens

    def test_purity(self, tiny_ensemble, mid_scenario):
        model = analytical_power_model(tiny_ensemble, mid_scenario)
        s = np.linspace(0.2, 0.89, 10)
        assert np.array_equal(model(s), model(s))
        assert np.array_equal(model(s), model(s))

    def test_matches_manual_composition(self, tiny_ensemble, mid_scenario):
        model = analytical_power_model(tiny_ensemble, mid_scenario)
        s = np.linspace(0.2, 0.89, 7)
        manual = predict_batch(tiny_ensemble,
                               apply_scaler(tiny_ensemble.scaler,
                                            engineer_grid(mid_scenario, s)))
        assert model(s) == pytest.approx(manual)

    def test_requires_scaler(self, tiny_ensemble, mid_scenario, rng):
        from dataclasses import replace as dc_replace

        bare = fit(rng.normal(size=(20, 3)), rng.normal(size=20), GBMConfig(m_trees=2))
        with pytest.raises(ValueError):
            analytical_power_model(bare, mid_scenario)

    def test_cc_accuracy_against_simulator(self, tiny_ensemble, small_dataset):
        # on CC points the learned power should sit within 5% of truth
        test = small_dataset[2]
        errs = []
        for rec in test.records[:30]:
            sc = rec.trace.scenario
            s_mid = 0.5 * (sc.s_ini + min(sc.s_final, 0.75))
            if s_mid >= 0.75 or s_mid <= sc.s_ini:
                continue
            true_p = float(np.interp(s_mid, rec.trace.soc_grid, rec.trace.power_kw))
            model = analytical_power_model(tiny_ensemble, sc)
            errs.append(abs(float(model(np.array([s_mid]))[0]) - true_p) / true_p)
        assert np.median(errs) < 0.05
