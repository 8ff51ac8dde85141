import filecmp
import math

import numpy as np
import pytest

from chargetime.physics import ChargingScenario, PhysicsParams, VehicleSpec
from chargetime.simulator import (
    Dataset,
    SimulationError,
    SimulatorConfig,
    cv_current_cap,
    generate_dataset,
    load_catalog,
    load_dataset,
    sample_training_rows,
    save_dataset,
    simulate_session,
    stratified_split,
)

NOISELESS = SimulatorConfig(noise_sigma=0.0)


class TestSimulateSession:
    def test_pure_cc_closed_form(self, mid_vehicle):
        sc = ChargingScenario(0.2, 0.7, 150.0, 1.0, 25.0, mid_vehicle)
        trace = simulate_session(sc, NOISELESS)
        assert trace.t_c_true == pytest.approx(15.0, rel=0.005)

    def test_station_limited_closed_form(self, mid_vehicle):
        sc = ChargingScenario(0.2, 0.7, 50.0, 1.0, 25.0, mid_vehicle)
        trace = simulate_session(sc, NOISELESS)
        assert trace.t_c_true == pytest.approx(45.0, rel=0.005)

    def test_empty_interval_rejected(self, mid_vehicle):
        with pytest.raises(Exception):
            ChargingScenario(0.5, 0.5, 50.0, 1.0, 25.0, mid_vehicle)

    def test_energy_consistency(self, mid_vehicle):
        sc = ChargingScenario(0.15, 0.92, 120.0, 0.84, 8.0, mid_vehicle)
        trace = simulate_session(sc, SimulatorConfig(noise_sigma=0.01, seed=5),
                                 PhysicsParams(k_taper=9.0))
        expected = mid_vehicle.c_bat_nom * sc.soh * (sc.s_final - sc.s_ini)
        assert trace.energy_kwh == pytest.approx(expected, rel=0.01)

    def test_trace_invariants(self, mid_vehicle):
        sc = ChargingScenario(0.3, 0.9, 150.0, 0.9, 30.0, mid_vehicle)
        trace = simulate_session(sc, NOISELESS, PhysicsParams(k_taper=12.0))
        assert np.all(np.diff(trace.soc_grid) > 0)
        assert trace.soc_grid[0] == pytest.approx(sc.s_ini)
        assert trace.soc_grid[-1] < sc.s_final
        assert np.all(trace.power_kw > 0)
        assert trace.t_c_true > 0
        assert len(trace.soc_grid) == len(trace.power_kw) == len(trace.current_a)

    def test_cc_cv_shape(self, mid_vehicle):
        sc = ChargingScenario(0.2, 0.95, 150.0, 1.0, 25.0, mid_vehicle)
        trace = simulate_session(sc, NOISELESS, PhysicsParams(k_taper=8.0))
        cc = trace.power_kw[trace.soc_grid < 0.8]
        cv = trace.power_kw[trace.soc_grid > 0.8]
        assert np.ptp(cc) < 1e-9
        assert np.all(np.diff(cv) < 0)

    def test_monotone_in_station_power(self, mid_vehicle):
        lo = ChargingScenario(0.2, 0.9, 50.0, 1.0, 25.0, mid_vehicle)
        hi = ChargingScenario(0.2, 0.9, 120.0, 1.0, 25.0, mid_vehicle)
        t_lo = simulate_session(lo, NOISELESS).t_c_true
        t_hi = simulate_session(hi, NOISELESS).t_c_true
        assert t_hi <= t_lo

    def test_monotone_in_soh(self, mid_vehicle):
        healthy = ChargingScenario(0.2, 0.9, 150.0, 1.0, 25.0, mid_vehicle)
        tired = ChargingScenario(0.2, 0.9, 150.0, 0.75, 25.0, mid_vehicle)
        assert (simulate_session(tired, NOISELESS).t_c_true
                <= simulate_session(healthy, NOISELESS).t_c_true)

    def test_power_floor_error(self):
        spec = VehicleSpec(c_bat_nom=75, p_max_nom=150, v_nom=400, p_cable=250)
        sc = ChargingScenario(0.2, 0.95, 150.0, 1.0, 25.0, spec)
        with pytest.raises(SimulationError, match="floor"):
            simulate_session(sc, SimulatorConfig(noise_sigma=0.0, power_floor_kw=40.0))

    def test_cv_cap_formula(self, mid_vehicle):
        sc = ChargingScenario(0.2, 0.95, 150.0, 1.0, 25.0, mid_vehicle)
        cfg = NOISELESS
        params = PhysicsParams(k_taper=10.0)
        p_cc = 150.0
        v_entry = 400.0 + 80.0 * (0.8 - 0.5)
        i_max = p_cc / v_entry
        s = 0.9
        v = 400.0 + 80.0 * (s - 0.5)
        expected = i_max * math.exp(-0.5 * (v - 1.05 * 400.0) / 400.0) * v
        assert cv_current_cap(s, p_cc, sc, cfg, params) == pytest.approx(expected, rel=1e-12)


class TestGenerateDataset:
    @pytest.fixture(scope="class")
    def ds(self):
        return generate_dataset(300, SimulatorConfig(seed=42))

    def test_count_and_ranges(self, ds):
        assert len(ds) == 300
        catalog = load_catalog()
        caps = {p.spec.c_bat_nom for p in catalog.platforms}
        for rec in ds.records:
            sc = rec.trace.scenario
            assert 0.05 <= sc.s_ini <= 0.95
            assert sc.s_ini < sc.s_final <= 0.95
            assert 7.0 <= sc.p_station <= 150.0
            assert -10.0 <= sc.t_amb <= 40.0
            assert 0.7 <= sc.soh <= 1.0
            assert 5.0 <= rec.params.k_taper <= 15.0
            assert sc.vehicle.c_bat_nom in caps

    def test_singleton(self):
        assert len(generate_dataset(1, SimulatorConfig(seed=1))) == 1

    def test_determinism(self, ds, tmp_path):
        other = generate_dataset(300, SimulatorConfig(seed=42))
        save_dataset(ds, tmp_path / "a")
        save_dataset(other, tmp_path / "b")
        assert filecmp.cmp(tmp_path / "a" / "sessions.csv", tmp_path / "b" / "sessions.csv",
                           shallow=False)
        assert filecmp.cmp(tmp_path / "a" / "sessions.json", tmp_path / "b" / "sessions.json",
                           shallow=False)

    def test_category_capacities(self, ds):
        expected = {"compact": 60.0, "mid-size": 75.0, "luxury": 85.0, "performance": 100.0}
        for rec in ds.records:
            assert rec.trace.scenario.vehicle.c_bat_nom == expected[rec.category]

    def test_energy_consistency_across_dataset(self, ds):
        for rec in ds.records:
            sc = rec.trace.scenario
            expected = sc.vehicle.c_bat_nom * sc.soh * (sc.s_final - sc.s_ini)
            assert rec.trace.energy_kwh == pytest.approx(expected, rel=0.01)


class TestStratifiedSplit:
    @pytest.fixture(scope="class")
    def ds(self):
        return generate_dataset(500, SimulatorConfig(seed=7))

    def test_partition(self, ds):
        train, val, test = stratified_split(ds, (0.64, 0.16, 0.20), seed=1)
        assert len(train) + len(val) + len(test) == len(ds)
        assert abs(len(train) - 320) <= 4
        assert abs(len(val) - 80) <= 4
        assert abs(len(test) - 100) <= 4

    def test_per_category_proportions(self, ds):
        train, val, test = stratified_split(ds, (0.64, 0.16, 0.20), seed=1)
        for cat in set(ds.categories):
            n_cat = sum(1 for c in ds.categories if c == cat)
            n_train = sum(1 for c in train.categories if c == cat)
            assert abs(n_train / n_cat - 0.64) <= 0.02

    def test_all_in_train(self, ds):
        train, val, test = stratified_split(ds, (1.0, 0.0, 0.0), seed=1)
        assert len(train) == len(ds) and len(val) == 0 and len(test) == 0

    def test_determinism(self, ds):
        a = stratified_split(ds, (0.64, 0.16, 0.20), seed=9)
        b = stratified_split(ds, (0.64, 0.16, 0.20), seed=9)
        for da, db in zip(a, b):
            assert [r.trace.scenario.s_ini for r in da.records] == \
                   [r.trace.scenario.s_ini for r in db.records]

    def test_small_category_rejected(self, ds):
        tiny = Dataset(ds.records[:2])
        with pytest.raises(ValueError, match="category"):
            stratified_split(tiny, (0.64, 0.16, 0.20), seed=0)

    def test_fractions_must_sum(self, ds):
        with pytest.raises(ValueError):
            stratified_split(ds, (0.5, 0.2, 0.2), seed=0)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        ds = generate_dataset(40, SimulatorConfig(seed=3))
        train, val, test = stratified_split(ds, (0.64, 0.16, 0.20), seed=3)
        tagged = Dataset(train.records + val.records + test.records)
        save_dataset(tagged, tmp_path / "d")
        loaded = load_dataset(tmp_path / "d")
        assert len(loaded) == len(tagged)
        for a, b in zip(tagged.records, loaded.records):
            assert a.trace.t_c_true == b.trace.t_c_true
            assert a.category == b.category
            assert a.split == b.split
            assert a.params.k_taper == b.params.k_taper
            assert np.array_equal(a.trace.soc_grid, b.trace.soc_grid)
            assert np.array_equal(a.trace.power_kw, b.trace.power_kw)
        # save -> load -> save is byte-identical
        save_dataset(loaded, tmp_path / "d2")
        assert filecmp.cmp(tmp_path / "d" / "sessions.csv", tmp_path / "d2" / "sessions.csv",
                           shallow=False)

    def test_training_rows(self):
        ds = generate_dataset(30, SimulatorConfig(seed=11))
        rows = sample_training_rows(ds.records, rows_per_session=8, seed=1)
        assert len(rows["s"]) == 240
        assert np.all(rows["power_kw"] > 0)
        again = sample_training_rows(ds.records, rows_per_session=8, seed=1)
        assert np.array_equal(rows["s"], again["s"])
