"""Battery-physics formulas shared by the simulator, the analytical predictor,
and the RL environment.

Units throughout: power kW, capacity kWh, voltage V, temperature degC,
time minutes unless noted. SoC and SoH are fractions in [0, 1].

The charging-power model is a two-phase CC-CV law: below the transition
SoC ``s_cv`` the vehicle accepts its full (degradation- and
temperature-derated) power; above it the acceptance tapers exponentially
with rate ``k_taper``. Delivered power is additionally capped by the
station and the cable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """An input lies outside the physical domain of a formula."""


@dataclass(frozen=True)
class TempEfficiencyModel:
    """Piecewise-linear charging-efficiency factor vs ambient temperature.

    Efficiency is 1 at ``ref_c`` and falls off linearly on both sides:
    cold weather hurts more (slope 0.006/degC, floored at 0.6) than warm
    weather (slope 0.003/degC, floored at 0.8). The exact shape is a
    documented stand-in; no authoritative parameterization exists for it.
    """

    ref_c: float = 25.0
    cold_slope: float = 0.006
    warm_slope: float = 0.003
    cold_floor: float = 0.6
    warm_floor: float = 0.8
    t_min: float = -40.0
    t_max: float = 60.0


@dataclass(frozen=True)
class VehicleSpec:
    """Nominal battery/charger parameters of one vehicle platform.

    ``beta`` is the pack-voltage slope in V per unit SoC; if omitted it
    defaults to 0.2 * v_nom (pack voltage spans +/-10% of nominal across
    the full SoC window, typical for Li-ion packs).
    """

    c_bat_nom: float
    p_max_nom: float
    v_nom: float
    p_cable: float
    beta: float | None = None

    def __post_init__(self):
        if self.beta is None:
            object.__setattr__(self, "beta", 0.2 * self.v_nom)
        if self.c_bat_nom <= 0:
            raise DomainError(f"c_bat_nom must be positive, got {self.c_bat_nom}")
        if self.p_max_nom <= 0:
            raise DomainError(f"p_max_nom must be positive, got {self.p_max_nom}")
        if self.v_nom <= 0:
            raise DomainError(f"v_nom must be positive, got {self.v_nom}")
        if self.p_cable < 0:
            raise DomainError(f"p_cable must be non-negative, got {self.p_cable}")
        if self.beta < 0:
            raise DomainError(f"beta must be non-negative, got {self.beta}")


@dataclass(frozen=True)
class ChargingScenario:
    """One charging session request: SoC window, station, battery state."""

    s_ini: float
    s_final: float
    p_station: float
    soh: float
    t_amb: float
    vehicle: VehicleSpec

    def __post_init__(self):
        if not (0.0 <= self.s_ini < self.s_final <= 1.0):
            raise DomainError(
                f"need 0 <= s_ini < s_final <= 1, got s_ini={self.s_ini}, s_final={self.s_final}"
            )
        if not (0.0 < self.soh <= 1.0):
            raise DomainError(f"soh must be in (0, 1], got {self.soh}")
        if self.p_station <= 0:
            raise DomainError(f"p_station must be positive, got {self.p_station}")


@dataclass(frozen=True)
class PhysicsParams:
    """CC-CV shape parameters.

    ``k_taper`` controls how fast acceptance decays past the CC->CV
    transition at ``s_cv``; plausible packs fall in [5, 15].
    """

    s_cv: float = 0.8
    k_taper: float = 10.0
    temp_model: TempEfficiencyModel = field(default_factory=TempEfficiencyModel)

    def __post_init__(self):
        if not (0.0 < self.s_cv < 1.0):
            raise DomainError(f"s_cv must be in (0, 1), got {self.s_cv}")
        if not (5.0 <= self.k_taper <= 15.0):
            raise DomainError(f"k_taper must be in [5, 15], got {self.k_taper}")


@dataclass(frozen=True)
class DegradedLimits:
    """Effective capacity and max power after state-of-health derating."""

    c_bat_eff: float
    p_max_eff: float


def effective_capacity(c_nom: float, soh: float) -> float:
    """Usable capacity in kWh: capacity fades proportionally with SoH."""
    if c_nom <= 0:
        raise DomainError(f"c_nom must be positive, got {c_nom}")
    if not (0.0 < soh <= 1.0):
        raise DomainError(f"soh must be in (0, 1], got {soh}")
    return c_nom * soh


def effective_max_power(p_nom: float, soh: float) -> float:
    """Max acceptance in kW: power fades gentler than capacity, to an
    0.85 * p_nom floor at full degradation."""
    if p_nom <= 0:
        raise DomainError(f"p_nom must be positive, got {p_nom}")
    if not (0.0 < soh <= 1.0):
        raise DomainError(f"soh must be in (0, 1], got {soh}")
    return p_nom * (0.85 + 0.15 * soh)


def degraded_limits(spec: VehicleSpec, soh: float) -> DegradedLimits:
    return DegradedLimits(
        c_bat_eff=effective_capacity(spec.c_bat_nom, soh),
        p_max_eff=effective_max_power(spec.p_max_nom, soh),
    )


def taper_factor(s, params: PhysicsParams = PhysicsParams()):
    """CV-phase power multiplier: 1 below s_cv, exp(-k*(s - s_cv)) above.

    Continuous at s_cv. Accepts scalars or arrays.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or np.any(s > 1):
        raise DomainError("SoC must lie in [0, 1]")
    out = np.where(s >= params.s_cv, np.exp(-params.k_taper * (s - params.s_cv)), 1.0)
    return float(out) if out.ndim == 0 else out


def temperature_efficiency(t_amb: float, params: PhysicsParams = PhysicsParams()) -> float:
    """Charging-efficiency factor in (0, 1]; 1 at the reference temperature."""
    tm = params.temp_model
    if not (tm.t_min <= t_amb <= tm.t_max):
        raise DomainError(f"t_amb must be in [{tm.t_min}, {tm.t_max}] degC, got {t_amb}")
    if t_amb < tm.ref_c:
        return max(tm.cold_floor, 1.0 - tm.cold_slope * (tm.ref_c - t_amb))
    return max(tm.warm_floor, 1.0 - tm.warm_slope * (t_amb - tm.ref_c))


def vehicle_power_acceptance(s, soh: float, t_amb: float, spec: VehicleSpec,
                             params: PhysicsParams = PhysicsParams()):
    """Power the vehicle will accept at SoC ``s``: the derated maximum,
    scaled by temperature efficiency, tapering past s_cv."""
    p_eff = effective_max_power(spec.p_max_nom, soh)
    eta = temperature_efficiency(t_amb, params)
    return p_eff * eta * taper_factor(s, params)


def actual_power(s, scenario: ChargingScenario, params: PhysicsParams = PhysicsParams()):
    """Delivered power: vehicle acceptance capped by station and cable."""
    acc = vehicle_power_acceptance(s, scenario.soh, scenario.t_amb, scenario.vehicle, params)
    out = np.minimum(np.minimum(acc, scenario.p_station), scenario.vehicle.p_cable)
    return float(out) if np.ndim(out) == 0 else out


def pack_voltage(s, spec: VehicleSpec):
    """Pack voltage, affine in SoC: v_nom at mid-SoC, slope beta."""
    s = np.asarray(s, dtype=float)
    out = spec.v_nom + spec.beta * (s - 0.5)
    return float(out) if out.ndim == 0 else out
