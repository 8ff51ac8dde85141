"""Charging-time prediction by SoC-grid quadrature.

Any power model (a callable mapping an SoC grid to kW) becomes a time
predictor: the SoC window is split into N uniform cells, the model output
at each left endpoint is clamped by the station power and the
SoH-derated vehicle maximum, and the per-cell dwell times
C_eff * ds / P_k are summed. The sum is exact for constant power and
first-order accurate otherwise.

Also provides the constant-power linear baseline, and the adapter that
turns a fitted tree ensemble into a power model for a fixed session.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import gbm
from .features import apply_scaler, engineer_grid
from .physics import (
    ChargingScenario,
    PhysicsParams,
    effective_capacity,
    effective_max_power,
    pack_voltage,
    temperature_efficiency,
)


class IntegrationError(RuntimeError):
    """The power model produced a non-positive value on the grid."""


@dataclass(frozen=True)
class IntegrationConfig:
    n_points: int = 100

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError(f"n_points must be >= 2, got {self.n_points}")


@dataclass(frozen=True)
class PredictionResult:
    t_c: float
    power_profile: np.ndarray
    current_profile: np.ndarray
    soc_grid: np.ndarray

    def to_dict(self, include_profiles: bool = True) -> dict:
        d = {"t_c_minutes": self.t_c}
        if include_profiles:
            d["soc_grid"] = self.soc_grid.tolist()
            d["power_profile_kw"] = self.power_profile.tolist()
            d["current_profile_a"] = self.current_profile.tolist()
        return d

    def to_json(self, include_profiles: bool = True) -> str:
        return json.dumps(self.to_dict(include_profiles), indent=1, sort_keys=True)


def soc_grid(scenario: ChargingScenario, cfg: IntegrationConfig) -> tuple[np.ndarray, float]:
    """Left-endpoint grid: s_k = s_ini + k*ds for k = 0..N-1."""
    ds = (scenario.s_final - scenario.s_ini) / cfg.n_points
    return scenario.s_ini + np.arange(cfg.n_points) * ds, ds


def predict_charging_time(scenario: ChargingScenario, power_model,
                          cfg: IntegrationConfig = IntegrationConfig()) -> PredictionResult:
    """Integrate a power model over the session's SoC window.

    ``power_model`` must accept an SoC array and return kW (a scalar
    broadcasts). Model output is clamped by min(., p_station, p_max_eff)
    before integration.
    """
    grid, ds = soc_grid(scenario, cfg)
    raw = np.asarray(power_model(grid), dtype=float)
    raw = np.broadcast_to(raw, grid.shape)
    p_eff = effective_max_power(scenario.vehicle.p_max_nom, scenario.soh)
    p = np.minimum(np.minimum(raw, scenario.p_station), p_eff)
    if np.any(p <= 0) or not np.all(np.isfinite(p)):
        k = int(np.argmax(~((p > 0) & np.isfinite(p))))
        raise IntegrationError(
            f"non-positive predicted power {p[k]!r} kW at s_k={grid[k]:.6f} (k={k})"
        )
    c_eff = effective_capacity(scenario.vehicle.c_bat_nom, scenario.soh)
    t_c = 60.0 * float(np.sum(c_eff * ds / p))
    current = p / pack_voltage(grid, scenario.vehicle)
    return PredictionResult(t_c=t_c, power_profile=p, current_profile=current, soc_grid=grid)


def linear_baseline_time(scenario: ChargingScenario,
                         params: PhysicsParams = PhysicsParams()) -> float:
    """Constant-power approximation: the whole window at the CC-phase
    power, no CV taper. Minutes."""
    c_eff = effective_capacity(scenario.vehicle.c_bat_nom, scenario.soh)
    p_eff = effective_max_power(scenario.vehicle.p_max_nom, scenario.soh)
    eta = temperature_efficiency(scenario.t_amb, params)
    p = min(p_eff * eta, scenario.p_station, scenario.vehicle.p_cable)
    return 60.0 * c_eff * (scenario.s_final - scenario.s_ini) / p


def analytical_power_model(ens: "gbm.TreeEnsemble", scenario: ChargingScenario):
    """Power model backed by a fitted ensemble: engineer -> standardize ->
    predict, with the session's context fixed and SoC varying."""
    if ens.scaler is None:
        raise ValueError("ensemble has no embedded scaler; fit it through the training pipeline")

    def model(s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        X = engineer_grid(scenario, s)
        return gbm.predict_batch(ens, apply_scaler(ens.scaler, X))

    return model
