"""Greedy-policy inference: turn a trained Q-network into power profiles.

At prediction time there is no observed trajectory, so the bookkeeping
state entries (current, elapsed time, delivered energy) are rolled
forward from the agent's own clamped predictions. Sessions are rolled in
lockstep so one network forward serves a whole batch per grid step.
"""

from __future__ import annotations

import numpy as np

from ..physics import ChargingScenario, effective_capacity, effective_max_power, pack_voltage
from .env import ACTION_COUNT, normalize_states
from .network import QNetwork


def greedy_power_profiles(agent: QNetwork, scenarios: list[ChargingScenario],
                          n_points: int = 100, fallback_profiles: np.ndarray | None = None,
                          ood_lo: np.ndarray | None = None, ood_hi: np.ndarray | None = None):
    """Greedy clamped power profiles for many sessions at once.

    Returns (profiles (n, N), grids (n, N)[, fallback_used (n,)]); the
    fallback outputs appear only when OOD bounds are supplied, in which
    case any grid point whose state leaves the bounds takes its power
    from ``fallback_profiles`` instead of the agent.
    """
    n = len(scenarios)
    N = n_points
    use_ood = ood_lo is not None and ood_hi is not None
    if use_ood and fallback_profiles is None:
        raise ValueError("OOD bounds given without fallback profiles")

    s_ini = np.array([sc.s_ini for sc in scenarios])
    s_fin = np.array([sc.s_final for sc in scenarios])
    soh = np.array([sc.soh for sc in scenarios])
    t_amb = np.array([sc.t_amb for sc in scenarios])
    p_station = np.array([sc.p_station for sc in scenarios])
    c_nom = np.array([sc.vehicle.c_bat_nom for sc in scenarios])
    p_max_nom = np.array([sc.vehicle.p_max_nom for sc in scenarios])
    v_nom = np.array([sc.vehicle.v_nom for sc in scenarios])
    beta = np.array([sc.vehicle.beta for sc in scenarios])

    c_eff = c_nom * soh
    p_eff = p_max_nom * (0.85 + 0.15 * soh)
    ds = (s_fin - s_ini) / N
    grids = s_ini[:, None] + np.arange(N)[None, :] * ds[:, None]

    profiles = np.zeros((n, N))
    fallback_used = np.zeros(n, bool)
    current = np.zeros(n)
    t_elapsed = np.zeros(n)
    e_delivered = np.zeros(n)
    states = np.empty((n, 9))
    step_kw = p_max_nom / (ACTION_COUNT - 1)

    for k in range(N):
        s_k = grids[:, k]
        v_k = v_nom + beta * (s_k - 0.5)
        states[:, 0] = s_k
        states[:, 1] = soh
        states[:, 2] = t_amb
        states[:, 3] = p_station
        states[:, 4] = c_nom
        states[:, 5] = v_k
        states[:, 6] = current
        states[:, 7] = t_elapsed
        states[:, 8] = e_delivered
        q, _ = agent.forward(normalize_states(states), training=False)
        acts = np.argmax(q, axis=1)
        p = np.minimum(np.minimum(acts * step_kw, p_station), p_eff)
        if use_ood:
            ood = np.any((states < ood_lo) | (states > ood_hi), axis=1)
            if ood.any():
                p = np.where(ood, fallback_profiles[:, k], p)
                fallback_used |= ood
        p = np.maximum(p, 1e-9)  # action 0 decodes to 0 kW; keep dwell times finite
        profiles[:, k] = p
        t_elapsed = t_elapsed + 60.0 * c_eff * ds / p
        e_delivered = e_delivered + c_eff * ds
        current = p / v_k
    if use_ood:
        return profiles, grids, fallback_used
    return profiles, grids


def greedy_power_model(agent: QNetwork, scenario: ChargingScenario):
    """Single-session power model callable for the quadrature predictor.

    Rolls the bookkeeping state across whatever SoC grid it is handed.
    """
    spec = scenario.vehicle
    c_eff = effective_capacity(spec.c_bat_nom, scenario.soh)
    p_eff = effective_max_power(spec.p_max_nom, scenario.soh)
    step_kw = spec.p_max_nom / (ACTION_COUNT - 1)

    def model(s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        ds = s[1] - s[0] if len(s) > 1 else (scenario.s_final - scenario.s_ini)
        out = np.empty(len(s))
        current = 0.0
        t_elapsed = 0.0
        e_delivered = 0.0
        for k, s_k in enumerate(s):
            v_k = pack_voltage(s_k, spec)
            state = np.array([
                s_k, scenario.soh, scenario.t_amb, scenario.p_station,
                spec.c_bat_nom, v_k, current, t_elapsed, e_delivered,
            ])
            q, _ = agent.forward(normalize_states(state[None, :]), training=False)
            p = min(int(np.argmax(q[0])) * step_kw, scenario.p_station, p_eff)
            p = max(p, 1e-9)
            out[k] = p
            t_elapsed += 60.0 * c_eff * ds / p
            e_delivered += c_eff * ds
            current = p / v_k
        return out

    return model
