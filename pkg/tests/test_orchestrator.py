import numpy as np
import pytest

from chargetime.features import apply_scaler, engineer_matrix, fit_scaler
from chargetime.gbm import GBMConfig, fit
from chargetime.orchestrator import (
    DOMINANCE_AT,
    TRANSITION_AT,
    HybridPredictor,
    OrchestratorConfig,
    OrchestratorError,
    Stage,
    epsilon_for,
    stage_for,
)
from chargetime.physics import ChargingScenario, VehicleSpec
from chargetime.rl.training import DQNConfig
from chargetime.simulator import sample_training_rows


class TestStageFor:
    def test_thresholds(self):
        assert stage_for(0) is Stage.COLD_START
        assert stage_for(499) is Stage.COLD_START
        assert stage_for(500) is Stage.TRANSITION
        assert stage_for(1499) is Stage.TRANSITION
        assert stage_for(1500) is Stage.DOMINANCE
        assert stage_for(10 ** 6) is Stage.DOMINANCE

    def test_monotone_never_regresses(self):
        order = [Stage.COLD_START, Stage.TRANSITION, Stage.DOMINANCE]
        last = -1
        for n in range(0, 2000, 13):
            rank = order.index(stage_for(n))
            assert rank >= last
            last = rank

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            stage_for(-1)


class TestEpsilonFor:
    def test_cold_start_not_applicable(self):
        assert epsilon_for(100) is None

    def test_decay_values(self):
        assert epsilon_for(500) == pytest.approx(0.3)
        assert epsilon_for(1000) == pytest.approx(0.2)
        assert epsilon_for(1499) == pytest.approx(0.1, abs=2e-4)
        assert epsilon_for(1500) == pytest.approx(0.05)
        assert epsilon_for(2000) == pytest.approx(0.05)

    def test_piecewise_shape(self):
        # linear decay clamps at 0.1 then drops to 0.05 exactly at 1500
        vals = [epsilon_for(n) for n in range(TRANSITION_AT, DOMINANCE_AT)]
        assert all(0.1 - 1e-9 <= v <= 0.3 + 1e-9 for v in vals)
        assert epsilon_for(DOMINANCE_AT) == 0.05


@pytest.fixture(scope="module")
def fitted_ensemble(small_dataset):
    train = small_dataset[0]
    rows = sample_training_rows(train.records, rows_per_session=6, seed=0)
    X_raw = engineer_matrix(rows["s"], rows["soh"], rows["t_amb"], rows["p_station"],
                            rows["c_nom"], rows["p_max_nom"])
    scaler = fit_scaler(X_raw)
    return fit(apply_scaler(scaler, X_raw), rows["power_kw"],
               GBMConfig(m_trees=200, max_depth=6, learning_rate=0.1), scaler=scaler)


@pytest.fixture()
def tiny_orchestrator_cfg():
    return OrchestratorConfig(
        dqn=DQNConfig(hidden=(16, 12, 8), batch_size=16, buffer_capacity=4000,
                      init_buffer=100, update_every=4, seed=5),
        kickoff_updates=30,
        updates_per_ingest=2,
    )


class TestHybridPredictor:
    def test_cold_start_provenance(self, fitted_ensemble, small_dataset, tiny_orchestrator_cfg):
        hp = HybridPredictor(fitted_ensemble, tiny_orchestrator_cfg)
        test = small_dataset[2]
        result, provenance = hp.predict(test.records[0].trace.scenario)
        assert provenance == "analytical"
        assert result.t_c > 0

    def test_ingest_counts_and_envelope(self, fitted_ensemble, small_dataset,
                                        tiny_orchestrator_cfg):
        hp = HybridPredictor(fitted_ensemble, tiny_orchestrator_cfg)
        train = small_dataset[0]
        for rec in train.records[:5]:
            hp.ingest_session(rec)
        assert hp.n_samples == 5
        assert len(hp.buffer) == 5 * 100
        states, *_ = hp.buffer.contents()
        assert np.all(states >= hp.ood_lo - 1e-12)
        assert np.all(states <= hp.ood_hi + 1e-12)

    def test_transition_kickoff(self, fitted_ensemble, small_dataset, monkeypatch):
        cfg = OrchestratorConfig(
            dqn=DQNConfig(hidden=(16, 12, 8), batch_size=16, buffer_capacity=4000,
                          init_buffer=100, seed=5),
            kickoff_updates=7,
            updates_per_ingest=1,
        )
        hp = HybridPredictor(fitted_ensemble, cfg)
        monkeypatch.setattr("chargetime.orchestrator.TRANSITION_AT", 3)
        train = small_dataset[0]
        hp.ingest_session(train.records[0])
        hp.ingest_session(train.records[1])
        assert hp.agent is None
        hp.ingest_session(train.records[2])  # crosses into transition
        assert hp.agent is not None
        assert hp._update_count == 7
        hp.ingest_session(train.records[3])
        assert hp._update_count == 8

    def test_dominance_without_agent_errors(self, fitted_ensemble, small_dataset,
                                            tiny_orchestrator_cfg):
        hp = HybridPredictor(fitted_ensemble, tiny_orchestrator_cfg)
        hp.n_samples = 2000
        with pytest.raises(OrchestratorError):
            hp.predict(small_dataset[2].records[0].trace.scenario)

    def test_dominance_provenance_and_fallback(self, fitted_ensemble, small_dataset,
                                               tiny_orchestrator_cfg, monkeypatch):
        monkeypatch.setattr("chargetime.orchestrator.TRANSITION_AT", 2)
        monkeypatch.setattr("chargetime.orchestrator.DOMINANCE_AT", 4)
        hp = HybridPredictor(fitted_ensemble, tiny_orchestrator_cfg)
        train = small_dataset[0]
        for rec in train.records[:6]:
            hp.ingest_session(rec)
        assert hp.stage is Stage.DOMINANCE
        in_dist = train.records[0].trace.scenario
        result, provenance = hp.predict(in_dist)
        assert provenance in ("rl", "rl-fallback")
        assert result.t_c > 0
        # a vehicle far outside anything ingested must trip the OOD fallback
        alien = ChargingScenario(
            s_ini=in_dist.s_ini, s_final=in_dist.s_final, p_station=in_dist.p_station,
            soh=in_dist.soh, t_amb=in_dist.t_amb,
            vehicle=VehicleSpec(c_bat_nom=400.0, p_max_nom=800.0, v_nom=1600.0,
                                p_cable=1000.0),
        )
        _, provenance2 = hp.predict(alien)
        assert provenance2 == "rl-fallback"

    def test_provenance_is_pure(self, fitted_ensemble, small_dataset, tiny_orchestrator_cfg,
                                monkeypatch):
        monkeypatch.setattr("chargetime.orchestrator.TRANSITION_AT", 2)
        monkeypatch.setattr("chargetime.orchestrator.DOMINANCE_AT", 3)
        hp = HybridPredictor(fitted_ensemble, tiny_orchestrator_cfg)
        train = small_dataset[0]
        for rec in train.records[:4]:
            hp.ingest_session(rec)
        sc = train.records[0].trace.scenario
        r1, p1 = hp.predict(sc)
        r2, p2 = hp.predict(sc)
        assert p1 == p2
        assert r1.t_c == r2.t_c

    def test_save_load_round_trip(self, fitted_ensemble, small_dataset,
                                  tiny_orchestrator_cfg, tmp_path, monkeypatch):
        monkeypatch.setattr("chargetime.orchestrator.TRANSITION_AT", 2)
        monkeypatch.setattr("chargetime.orchestrator.DOMINANCE_AT", 3)
        hp = HybridPredictor(fitted_ensemble, tiny_orchestrator_cfg)
        train = small_dataset[0]
        for rec in train.records[:4]:
            hp.ingest_session(rec)
        sc = train.records[1].trace.scenario
        t_before, prov_before = hp.predict(sc)
        hp.save(tmp_path / "state")
        loaded = HybridPredictor.load(tmp_path / "state", tiny_orchestrator_cfg)
        assert loaded.n_samples == hp.n_samples
        assert len(loaded.buffer) == len(hp.buffer)
        t_after, prov_after = loaded.predict(sc)
        assert prov_after == prov_before
        assert t_after.t_c == pytest.approx(t_before.t_c, rel=1e-12)
