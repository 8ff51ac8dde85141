"""Physics-informed feature engineering for the power regressor.

Each training/inference row describes one SoC point of one session. The
26-entry vector is the concatenation, in frozen order, of

  base (8)   raw session parameters plus derated capacity/power
  poly (7)   SoC polynomial/log basis for smooth nonlinearity
  taper (4)  CC->CV transition terms, active above SoC 0.8
  soh (7)    degradation interaction terms

The order is versioned (``FEATURE_ORDER_VERSION``): trained-ensemble split
indices are meaningless under any other order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .physics import ChargingScenario

LOG_EPS = 1e-6
TAPER_KNOT = 0.8
SIGMA_FLOOR = 1e-8

FEATURE_ORDER_VERSION = "ct26-v1"

FEATURE_NAMES = (
    # base
    "soc", "c_bat_nom", "p_max_nom", "t_amb", "p_station", "soh", "c_bat_eff", "p_max_eff",
    # SoC polynomials
    "soc^1", "soc^2", "soc^3", "soc^4", "soc^5", "sqrt_soc", "log_soc",
    # CC-CV transition
    "cv_m", "cv_m^2", "cv_m^3", "cv_exp",
    # SoH interactions
    "soc*soh", "soc^2*soh", "soh^2", "soc*fade", "cv*fade", "cap_ratio", "power_ratio",
)

N_FEATURES = len(FEATURE_NAMES)

# rollup used by importance reporting; every feature appears exactly once
FEATURE_CATEGORIES = {
    "physical limits": ("c_bat_nom", "p_max_nom", "p_station", "c_bat_eff", "p_max_eff"),
    "temperature": ("t_amb",),
    "soc polynomials": ("soc", "soc^1", "soc^2", "soc^3", "soc^4", "soc^5", "sqrt_soc", "log_soc"),
    "cc-cv indicators": ("cv_m", "cv_m^2", "cv_m^3", "cv_exp"),
    "soh interactions": ("soh", "soc*soh", "soc^2*soh", "soh^2", "soc*fade", "cv*fade",
                         "cap_ratio", "power_ratio"),
}


def poly_features(s: float) -> np.ndarray:
    """[s, s^2, s^3, s^4, s^5, sqrt(s), log(s + 1e-6)] for s in [0, 1]."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"SoC must lie in [0, 1], got {s}")
    return np.array([s, s**2, s**3, s**4, s**5, np.sqrt(s), np.log(s + LOG_EPS)])


def taper_features(s: float) -> np.ndarray:
    """[m, m^2, m^3, exp(-10 m)] with m = max(0, s - 0.8); [0,0,0,1] in CC."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"SoC must lie in [0, 1], got {s}")
    m = max(0.0, s - TAPER_KNOT)
    return np.array([m, m**2, m**3, np.exp(-10.0 * m)])


def soh_features(s: float, soh: float) -> np.ndarray:
    """Degradation interactions. Entry 5, (s - 0.8)*(1 - soh), is signed
    (no max with 0), unlike the taper features."""
    return np.array([
        s * soh,
        s**2 * soh,
        soh**2,
        s * (1.0 - soh),
        (s - TAPER_KNOT) * (1.0 - soh),
        soh,                      # c_eff / c_nom
        0.85 + 0.15 * soh,        # p_eff / p_nom
    ])


def engineer_matrix(s, soh, t_amb, p_station, c_nom, p_max_nom) -> np.ndarray:
    """Vectorized 26-column feature matrix. All arguments broadcast to the
    shape of ``s``."""
    s = np.asarray(s, dtype=float)
    n = s.shape[0]
    soh, t_amb, p_station, c_nom, p_max_nom = (
        np.broadcast_to(np.asarray(a, dtype=float), s.shape)
        for a in (soh, t_amb, p_station, c_nom, p_max_nom)
    )
    X = np.empty((n, N_FEATURES))
    c_eff = c_nom * soh
    p_eff = p_max_nom * (0.85 + 0.15 * soh)
    # base
    X[:, 0] = s
    X[:, 1] = c_nom
    X[:, 2] = p_max_nom
    X[:, 3] = t_amb
    X[:, 4] = p_station
    X[:, 5] = soh
    X[:, 6] = c_eff
    X[:, 7] = p_eff
    # SoC polynomials
    X[:, 8] = s
    X[:, 9] = s**2
    X[:, 10] = s**3
    X[:, 11] = s**4
    X[:, 12] = s**5
    X[:, 13] = np.sqrt(s)
    X[:, 14] = np.log(s + LOG_EPS)
    # CC-CV transition
    m = np.maximum(0.0, s - TAPER_KNOT)
    X[:, 15] = m
    X[:, 16] = m**2
    X[:, 17] = m**3
    X[:, 18] = np.exp(-10.0 * m)
    # SoH interactions
    X[:, 19] = s * soh
    X[:, 20] = s**2 * soh
    X[:, 21] = soh**2
    X[:, 22] = s * (1.0 - soh)
    X[:, 23] = (s - TAPER_KNOT) * (1.0 - soh)
    X[:, 24] = soh
    X[:, 25] = 0.85 + 0.15 * soh
    return X


def engineer(s: float, scenario: ChargingScenario) -> np.ndarray:
    """26-vector for one SoC point of one session."""
    return engineer_matrix(
        np.array([s]), scenario.soh, scenario.t_amb, scenario.p_station,
        scenario.vehicle.c_bat_nom, scenario.vehicle.p_max_nom,
    )[0]


def engineer_grid(scenario: ChargingScenario, s_grid: np.ndarray) -> np.ndarray:
    """Feature matrix for a whole SoC grid of one session."""
    return engineer_matrix(
        s_grid, scenario.soh, scenario.t_amb, scenario.p_station,
        scenario.vehicle.c_bat_nom, scenario.vehicle.p_max_nom,
    )


@dataclass(frozen=True)
class Scaler:
    """Column standardization statistics (population convention).

    Columns whose std falls below ``SIGMA_FLOOR`` get sigma = 1 so constant
    features standardize to exactly zero instead of NaN.
    """

    mu: np.ndarray
    sigma: np.ndarray

    def to_dict(self) -> dict:
        return {
            "feature_order_version": FEATURE_ORDER_VERSION,
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        if d.get("feature_order_version", FEATURE_ORDER_VERSION) != FEATURE_ORDER_VERSION:
            raise ValueError(
                f"scaler was fitted under feature order {d['feature_order_version']!r}, "
                f"this build uses {FEATURE_ORDER_VERSION!r}"
            )
        return cls(mu=np.asarray(d["mu"], dtype=float), sigma=np.asarray(d["sigma"], dtype=float))


def fit_scaler(X: np.ndarray) -> Scaler:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("scaler fit needs a 2-d matrix with at least 2 rows")
    mu = X.mean(axis=0)
    sigma = X.std(axis=0)
    sigma = np.where(sigma < SIGMA_FLOOR, 1.0, sigma)
    return Scaler(mu=mu, sigma=sigma)


def apply_scaler(scaler: Scaler, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != scaler.mu.shape[0]:
        raise ValueError(f"expected {scaler.mu.shape[0]} features, got {x.shape[-1]}")
    return (x - scaler.mu) / scaler.sigma


def inverse_scaler(scaler: Scaler, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return z * scaler.sigma + scaler.mu
