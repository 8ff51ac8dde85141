"""The MDP over charging sessions.

One episode is one session discretized into N = 100 SoC steps (the same
grid the time predictor integrates over). At step k the agent predicts
the charging power for cell k; the environment reveals the power the
simulator actually delivered there, scores the prediction, and advances
the state. Actions do not influence the trajectory (the battery charges
as physics dictates); they are predictions, so the reward is the only
feedback channel.

State layout (physical units; normalize with :func:`normalize_states`
before feeding a network):

  [soc, soh, t_amb, p_station, c_bat_nom, v_pack, current, t_elapsed_min,
   energy_delivered_kwh]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..physics import (
    ChargingScenario,
    PhysicsParams,
    VehicleSpec,
    effective_capacity,
    effective_max_power,
    pack_voltage,
    taper_factor,
    temperature_efficiency,
)
from ..simulator import SessionTrace
from .buffer import STATE_DIM, Transition

ACTION_COUNT = 50
N_EPISODE_STEPS = 100

# fixed physical denominators that bring state entries to comparable scale
STATE_SCALE = np.array([1.0, 1.0, 50.0, 150.0, 100.0, 800.0, 500.0, 600.0, 100.0])

STATE_FIELDS = ("soc", "soh", "t_amb", "p_station", "c_bat_nom",
                "v_pack", "current", "t_elapsed", "e_delivered")


@dataclass(frozen=True)
class RewardConfig:
    lambda_soh: float = 10.0
    lambda_cv: float = 5.0
    s_cv: float = 0.8

    def __post_init__(self):
        if self.lambda_soh < 0 or self.lambda_cv < 0:
            raise ValueError("penalty weights must be non-negative")


def action_power(i: int, p_max_nom: float) -> float:
    """Decode action index i in 0..49 to its power level."""
    if not 0 <= i < ACTION_COUNT:
        raise IndexError(f"action index {i} outside 0..{ACTION_COUNT - 1}")
    return i * p_max_nom / (ACTION_COUNT - 1)


def nearest_action(p: float, p_max_nom: float) -> int:
    """Index of the power level closest to p (used to imitate a teacher)."""
    step = p_max_nom / (ACTION_COUNT - 1)
    return int(np.clip(round(p / step), 0, ACTION_COUNT - 1))


def normalize_states(states: np.ndarray) -> np.ndarray:
    return np.asarray(states, dtype=float) / STATE_SCALE


def reward(p_pred: float, p_actual: float, s: float, soh: float, t_amb: float,
           spec: VehicleSpec, cfg: RewardConfig = RewardConfig(),
           params: PhysicsParams = PhysicsParams()) -> float:
    """Non-positive score: prediction error, plus a heavy penalty for
    exceeding the SoH-derated power ceiling, plus a CV-region penalty for
    straying from the expected tapering power."""
    p_eff = effective_max_power(spec.p_max_nom, soh)
    r = -abs(p_pred - p_actual)
    r -= cfg.lambda_soh * max(0.0, p_pred - p_eff)
    if s > cfg.s_cv:
        p_target = p_eff * temperature_efficiency(t_amb, params) * taper_factor(s, params)
        r -= cfg.lambda_cv * abs(p_pred - p_target)
    return r


class ChargingEnv:
    """Replays one simulated session on the prediction grid.

    Built from a trace (the logged ground truth); a fresh scenario can be
    simulated first by the caller. ``reset`` returns the initial state;
    ``step(action)`` returns (next_state, reward, done).
    """

    def __init__(self, trace: SessionTrace, params: PhysicsParams,
                 reward_cfg: RewardConfig = RewardConfig(),
                 n_steps: int = N_EPISODE_STEPS):
        self.trace = trace
        self.params = params
        self.reward_cfg = reward_cfg
        self.n_steps = n_steps
        sc = trace.scenario
        self._c_eff = effective_capacity(sc.vehicle.c_bat_nom, sc.soh)
        self._ds = (sc.s_final - sc.s_ini) / n_steps
        self._grid = sc.s_ini + np.arange(n_steps) * self._ds
        self._p_actual = np.interp(self._grid, trace.soc_grid, trace.power_kw)
        self._k = None

    def reset(self) -> np.ndarray:
        self._k = 0
        self._t_elapsed = 0.0
        self._e_delivered = 0.0
        return self._state(self.trace.scenario.s_ini, current=0.0)

    def _state(self, s: float, current: float) -> np.ndarray:
        sc = self.trace.scenario
        return np.array([
            s, sc.soh, sc.t_amb, sc.p_station, sc.vehicle.c_bat_nom,
            pack_voltage(s, sc.vehicle), current, self._t_elapsed, self._e_delivered,
        ])

    def step(self, action: int):
        if self._k is None or self._k >= self.n_steps:
            raise RuntimeError("episode is finished; call reset() first")
        sc = self.trace.scenario
        k = self._k
        s_k = self._grid[k]
        p_act = float(self._p_actual[k])
        p_pred = action_power(action, sc.vehicle.p_max_nom)
        r = reward(p_pred, p_act, s_k, sc.soh, sc.t_amb, sc.vehicle,
                   self.reward_cfg, self.params)
        self._t_elapsed += 60.0 * self._c_eff * self._ds / p_act
        self._e_delivered += self._c_eff * self._ds
        self._k += 1
        done = self._k >= self.n_steps
        s_next = sc.s_final if done else self._grid[self._k]
        next_state = self._state(s_next, current=p_act / pack_voltage(s_k, sc.vehicle))
        return next_state, r, done


def rollout(env: ChargingEnv, action_fn) -> list[Transition]:
    """Run one episode with ``action_fn(state) -> action index`` and
    collect the transitions."""
    transitions = []
    state = env.reset()
    done = False
    while not done:
        a = int(action_fn(state))
        next_state, r, done = env.step(a)
        transitions.append(Transition(state=state, action=a, reward=r,
                                      next_state=next_state, done=done))
        state = next_state
    return transitions


assert len(STATE_FIELDS) == STATE_DIM
assert len(STATE_SCALE) == STATE_DIM
