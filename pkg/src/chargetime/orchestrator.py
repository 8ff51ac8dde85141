"""Three-stage progressive learning and the hybrid predictor.

Routing is a pure function of the accumulated session count: below 500
sessions the analytical (tree-ensemble) pipeline answers everything while
physics-consistent transitions accumulate in the replay buffer; from 500
the agent trains with epsilon decaying 0.3 -> 0.1; from 1500 the agent is
primary with epsilon 0.05, falling back to the analytical model at any
grid point whose state leaves the envelope of buffered training states
(expanded 5% per side).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gbm
from .physics import ChargingScenario
from .predictor import IntegrationConfig, PredictionResult, analytical_power_model, soc_grid
from .rl.buffer import ReplayBuffer, Transition
from .rl.env import RewardConfig, nearest_action
from .rl.inference import greedy_power_profiles
from .rl.network import Adam, QNetwork
from .rl.training import DQNConfig, _episode_arrays, _episode_rewards, sync_target, td_update
from .simulator import SessionRecord
from .physics import effective_capacity, effective_max_power, pack_voltage

STATE_FORMAT_VERSION = 1

try:
    from filelock import FileLock
except ImportError:  # pragma: no cover - filelock ships with the dev env
    FileLock = None


class OrchestratorError(RuntimeError):
    """The orchestrator was asked for something its stage cannot provide."""


class Stage(enum.Enum):
    COLD_START = "cold_start"
    TRANSITION = "transition"
    DOMINANCE = "dominance"


TRANSITION_AT = 500
DOMINANCE_AT = 1500


def stage_for(n_samples: int) -> Stage:
    if n_samples < 0:
        raise ValueError(f"n_samples must be >= 0, got {n_samples}")
    if n_samples < TRANSITION_AT:
        return Stage.COLD_START
    if n_samples < DOMINANCE_AT:
        return Stage.TRANSITION
    return Stage.DOMINANCE


def epsilon_for(n_samples: int) -> float | None:
    """Exploration rate for the stage; None during cold start (the agent
    selects no actions there, so no epsilon applies)."""
    stage = stage_for(n_samples)
    if stage is Stage.COLD_START:
        return None
    if stage is Stage.TRANSITION:
        return 0.3 - 0.2 * (n_samples - TRANSITION_AT) / (DOMINANCE_AT - TRANSITION_AT)
    return 0.05


@dataclass(frozen=True)
class OrchestratorConfig:
    dqn: DQNConfig = field(default_factory=DQNConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)
    ood_margin: float = 0.05
    kickoff_updates: int = 2000
    updates_per_ingest: int = 25


class HybridPredictor:
    """Owns the analytical ensemble, the (lazily created) agent, the replay
    buffer, and the OOD envelope. Single logical writer: interleave
    ingest_session and predict from one thread."""

    def __init__(self, analytical: gbm.TreeEnsemble,
                 config: OrchestratorConfig = OrchestratorConfig()):
        self.analytical = analytical
        self.config = config
        self.agent: QNetwork | None = None
        self.n_samples = 0
        self.buffer = ReplayBuffer(config.dqn.buffer_capacity)
        self.ood_lo: np.ndarray | None = None
        self.ood_hi: np.ndarray | None = None
        self._optimizer: Adam | None = None
        self._target: QNetwork | None = None
        self._update_count = 0

    # ---- lifecycle ------------------------------------------------------
    @property
    def stage(self) -> Stage:
        return stage_for(self.n_samples)

    def ingest_session(self, record: SessionRecord) -> None:
        """Absorb one observed session: count it, store its transitions
        (teacher actions = nearest level to the observed power), extend
        the OOD envelope, and train if past the cold-start stage."""
        cfg = self.config.dqn
        states, p_act, grid, _ds = _episode_arrays(record, cfg.n_episode_steps,
                                                   self.config.reward)
        sc = record.trace.scenario
        acts = np.array([nearest_action(p, sc.vehicle.p_max_nom) for p in p_act])
        p_pred = acts * (sc.vehicle.p_max_nom / (cfg.n_actions - 1))
        rewards = _episode_rewards(p_pred, p_act, grid, record, self.config.reward)
        for k in range(cfg.n_episode_steps):
            self.buffer.add(Transition(states[k], int(acts[k]), float(rewards[k]),
                                       states[k + 1], k == cfg.n_episode_steps - 1))
        lo = states.min(axis=0)
        hi = states.max(axis=0)
        self.ood_lo = lo if self.ood_lo is None else np.minimum(self.ood_lo, lo)
        self.ood_hi = hi if self.ood_hi is None else np.maximum(self.ood_hi, hi)
        before = self.stage
        self.n_samples += 1
        if before is Stage.COLD_START and self.stage is not Stage.COLD_START:
            self._ensure_agent()
            self._train(self.config.kickoff_updates)
        elif self.stage is not Stage.COLD_START:
            self._ensure_agent()
            self._train(self.config.updates_per_ingest)

    def _ensure_agent(self) -> None:
        if self.agent is None:
            cfg = self.config.dqn
            self.agent = QNetwork(hidden=cfg.hidden, n_actions=cfg.n_actions,
                                  dropout=cfg.dropout, seed=cfg.seed,
                                  dtype=np.dtype(cfg.dtype))
            self._target = self.agent.copy()
            self._optimizer = Adam(self.agent.params, lr=cfg.learning_rate)

    def _train(self, n_updates: int) -> None:
        cfg = self.config.dqn
        if len(self.buffer) < cfg.batch_size:
            return
        rng_batch = np.random.default_rng([cfg.seed, 100, self.n_samples])
        rng_dropout = np.random.default_rng([cfg.seed, 101, self.n_samples])
        for _ in range(n_updates):
            batch = self.buffer.sample(cfg.batch_size, rng_batch)
            td_update(self.agent, self._target, batch, cfg, self._optimizer, rng_dropout)
            self._update_count += 1
            if self._update_count % cfg.target_sync_steps == 0:
                sync_target(self.agent, self._target)

    # ---- prediction ------------------------------------------------------
    def predict(self, scenario: ChargingScenario) -> tuple[PredictionResult, str]:
        """Predict one session; returns (result, provenance) where
        provenance is 'analytical', 'rl', or 'rl-fallback'."""
        from .predictor import predict_charging_time

        cfg = self.config.integration
        if self.stage is not Stage.DOMINANCE:
            model = analytical_power_model(self.analytical, scenario)
            return predict_charging_time(scenario, model, cfg), "analytical"
        if self.agent is None:
            raise OrchestratorError("dominance stage reached but no agent is trained")
        grid, ds = soc_grid(scenario, cfg)
        analytical = analytical_power_model(self.analytical, scenario)
        p_eff = effective_max_power(scenario.vehicle.p_max_nom, scenario.soh)
        fallback = np.minimum(np.minimum(analytical(grid), scenario.p_station), p_eff)
        margin_lo, margin_hi = self._ood_bounds()
        profiles, _grids, fb_used = greedy_power_profiles(
            self.agent, [scenario], n_points=cfg.n_points,
            fallback_profiles=fallback[None, :], ood_lo=margin_lo, ood_hi=margin_hi,
        )
        powers = profiles[0]
        c_eff = effective_capacity(scenario.vehicle.c_bat_nom, scenario.soh)
        t_c = 60.0 * float(np.sum(c_eff * ds / powers))
        result = PredictionResult(
            t_c=t_c, power_profile=powers,
            current_profile=powers / pack_voltage(grid, scenario.vehicle),
            soc_grid=grid,
        )
        return result, ("rl-fallback" if bool(fb_used[0]) else "rl")

    def _ood_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.ood_lo is None:
            raise OrchestratorError("no sessions ingested; OOD envelope is undefined")
        span = self.ood_hi - self.ood_lo
        margin = self.config.ood_margin * np.where(span > 0, span, np.maximum(np.abs(self.ood_lo), 1e-9))
        return self.ood_lo - margin, self.ood_hi + margin

    # ---- persistence -----------------------------------------------------
    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        lock = FileLock(str(out / ".lock")) if FileLock is not None else _NullLock()
        with lock:
            gbm.save_model(self.analytical, out / "analytical.json")
            if self.agent is not None:
                from .rl.training import save_agent

                save_agent(out / "agent.bin", self.agent, self.config.dqn)
            self.buffer.save_npz(out / "buffer.npz")
            state = {
                "format_version": STATE_FORMAT_VERSION,
                "n_samples": self.n_samples,
                "update_count": self._update_count,
                "ood_lo": None if self.ood_lo is None else self.ood_lo.tolist(),
                "ood_hi": None if self.ood_hi is None else self.ood_hi.tolist(),
                "ood_margin": self.config.ood_margin,
            }
            (out / "state.json").write_text(json.dumps(state, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, in_dir: str | Path,
             config: OrchestratorConfig = OrchestratorConfig()) -> "HybridPredictor":
        src = Path(in_dir)
        lock = FileLock(str(src / ".lock")) if FileLock is not None else _NullLock()
        with lock:
            analytical = gbm.load_model(src / "analytical.json")
            hp = cls(analytical, config)
            state = json.loads((src / "state.json").read_text())
            if state["format_version"] != STATE_FORMAT_VERSION:
                raise ValueError(f"unsupported state format_version {state['format_version']}")
            hp.n_samples = state["n_samples"]
            hp._update_count = state["update_count"]
            hp.ood_lo = None if state["ood_lo"] is None else np.asarray(state["ood_lo"])
            hp.ood_hi = None if state["ood_hi"] is None else np.asarray(state["ood_hi"])
            hp.buffer = ReplayBuffer.load_npz(src / "buffer.npz")
            agent_path = src / "agent.bin"
            if agent_path.exists():
                from .rl.training import load_agent

                hp.agent, _ = load_agent(agent_path)
                hp._target = hp.agent.copy()
                hp._optimizer = Adam(hp.agent.params, lr=config.dqn.learning_rate)
        return hp


class _NullLock:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False
