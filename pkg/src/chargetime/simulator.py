"""CC-CV charging-session simulator: the ground-truth oracle and dataset
generator all predictors are scored against.

A session is integrated with explicit Euler in time (default dt = 10 s):
ds = P dt / (3600 C_eff). Delivered power is the two-phase physics law of
:mod:`chargetime.physics`; in the CV region (s >= s_cv) an additional
voltage-dependent current-taper cap I_cv = I_max * exp(-k (V - V_cv)/V_nom)
applies, and whichever of the two yields lower power wins. Optional
multiplicative log-normal noise perturbs each step's power.

Dataset generation draws scenarios from a configurable vehicle catalog
(see ``data/catalog.json``); each session gets its own RNG stream derived
from (seed, index), so generation is order-independent and reproducible.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .physics import (
    ChargingScenario,
    PhysicsParams,
    VehicleSpec,
    effective_capacity,
    effective_max_power,
    pack_voltage,
    taper_factor,
    temperature_efficiency,
)

DATASET_FORMAT_VERSION = 1

CSV_COLUMNS = (
    "session_id", "s", "soh", "t_amb", "p_station", "c_nom", "p_max_nom",
    "p_cable", "power_kw", "current_a", "v_nom",
)


class SimulationError(RuntimeError):
    """The time-stepped integration failed to reach the target SoC."""


@dataclass(frozen=True)
class SimulatorConfig:
    """Integration and noise settings.

    ``cv_k`` is the dimensionless current-taper constant; the taper
    exponent uses the pack over-voltage normalized by v_nom, which keeps
    the published constant meaningful across 350 V and 800 V platforms.
    ``v_cv_ratio`` gives the CV threshold voltage per vehicle as a
    fraction of v_nom.
    """

    dt: float = 10.0
    cv_k: float = 0.5
    v_cv_ratio: float = 1.05
    noise_sigma: float = 0.01
    seed: int = 0
    power_floor_kw: float = 0.1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.cv_k <= 0:
            raise ValueError(f"cv_k must be positive, got {self.cv_k}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")


@dataclass(frozen=True)
class SessionTrace:
    """Ground-truth trajectory of one simulated session.

    ``soc_grid`` holds the SoC at the start of each time step; power and
    current are the values applied over that step. ``t_c_true`` is the
    total charging time in minutes.
    """

    scenario: ChargingScenario
    soc_grid: np.ndarray
    power_kw: np.ndarray
    current_a: np.ndarray
    t_c_true: float
    energy_kwh: float


@dataclass(frozen=True)
class SessionRecord:
    """A trace plus the dataset bookkeeping that goes with it.

    ``params`` carries the session's true physics draw (taper depth);
    predictors never see it, but the RL environment needs it to score
    rewards against the expected tapering power.
    """

    trace: SessionTrace
    category: str
    params: PhysicsParams
    split: str | None = None


@dataclass
class Dataset:
    records: list[SessionRecord]

    def __len__(self) -> int:
        return len(self.records)

    def by_split(self, split: str) -> "Dataset":
        return Dataset([r for r in self.records if r.split == split])

    @property
    def categories(self) -> list[str]:
        return [r.category for r in self.records]

    @property
    def traces(self) -> list[SessionTrace]:
        return [r.trace for r in self.records]


@dataclass(frozen=True)
class Platform:
    name: str
    category: str
    spec: VehicleSpec
    k_taper_base: float
    station_tiers: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class SamplingDesign:
    s_ini_range: tuple[float, float]
    s_final_max: float
    min_delta_s: float
    topup_prob: float
    topup_s_final_range: tuple[float, float]
    topup_s_ini_max: float
    t_amb_range: tuple[float, float]
    soh_range: tuple[float, float]
    k_jitter_base: float
    k_jitter_soh_slope: float
    k_range: tuple[float, float]
    station_derate_range: tuple[float, float]
    station_min_kw: float


@dataclass(frozen=True)
class Catalog:
    platforms: tuple[Platform, ...]
    sampling: SamplingDesign


def load_catalog(path: str | Path | None = None) -> Catalog:
    """Load the vehicle catalog; the packaged default if no path given."""
    if path is None:
        raw = json.loads(resources.files("chargetime.data").joinpath("catalog.json").read_text())
    else:
        raw = json.loads(Path(path).read_text())
    platforms = tuple(
        Platform(
            name=p["name"],
            category=p["category"],
            spec=VehicleSpec(
                c_bat_nom=p["c_bat_nom"], p_max_nom=p["p_max_nom"],
                v_nom=p["v_nom"], p_cable=p["p_cable"],
            ),
            k_taper_base=p["k_taper_base"],
            station_tiers=tuple((float(kw), float(w)) for kw, w in p["station_tiers"]),
        )
        for p in raw["platforms"]
    )
    s = raw["sampling"]
    sampling = SamplingDesign(
        s_ini_range=tuple(s["s_ini_range"]),
        s_final_max=s["s_final_max"],
        min_delta_s=s["min_delta_s"],
        topup_prob=s["topup_prob"],
        topup_s_final_range=tuple(s["topup_s_final_range"]),
        topup_s_ini_max=s["topup_s_ini_max"],
        t_amb_range=tuple(s["t_amb_range"]),
        soh_range=tuple(s["soh_range"]),
        k_jitter_base=s["k_jitter_base"],
        k_jitter_soh_slope=s["k_jitter_soh_slope"],
        k_range=tuple(s["k_range"]),
        station_derate_range=tuple(s["station_derate_range"]),
        station_min_kw=s["station_min_kw"],
    )
    return Catalog(platforms=platforms, sampling=sampling)


def cv_current_cap(s: float, cc_entry_power: float, scenario: ChargingScenario,
                   cfg: SimulatorConfig, params: PhysicsParams) -> float:
    """Power ceiling from the CV-phase current taper.

    I_max is the pack current at the CC->CV transition; past it the
    current decays as exp(-cv_k * (V - V_cv)/V_nom) while the voltage keeps
    rising, so the cap is I_cv * V(s).
    """
    spec = scenario.vehicle
    v_cv = cfg.v_cv_ratio * spec.v_nom
    v_entry = pack_voltage(params.s_cv, spec)
    i_max = cc_entry_power / v_entry
    v = pack_voltage(s, spec)
    i_cv = i_max * math.exp(-cfg.cv_k * max(0.0, v - v_cv) / spec.v_nom)
    return i_cv * v


def _delivered_power(s: float, scenario: ChargingScenario, cfg: SimulatorConfig,
                     params: PhysicsParams, p_eff: float, eta: float) -> float:
    """Noiseless power at SoC s: physics law, with the CV current cap
    applied on top inside the CV region."""
    spec = scenario.vehicle
    p_cc = min(p_eff * eta, scenario.p_station, spec.p_cable)
    if s < params.s_cv:
        return p_cc
    p_law = min(p_eff * eta * taper_factor(s, params), scenario.p_station, spec.p_cable)
    return min(p_law, cv_current_cap(s, p_cc, scenario, cfg, params))


def simulate_session(scenario: ChargingScenario, cfg: SimulatorConfig = SimulatorConfig(),
                     params: PhysicsParams | None = None,
                     rng: np.random.Generator | None = None) -> SessionTrace:
    """Integrate one session from s_ini to s_final.

    Raises :class:`SimulationError` if power falls below the configured
    floor before the target SoC is reached.
    """
    if params is None:
        params = PhysicsParams()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    spec = scenario.vehicle
    c_eff = effective_capacity(spec.c_bat_nom, scenario.soh)
    p_eff = effective_max_power(spec.p_max_nom, scenario.soh)
    eta = temperature_efficiency(scenario.t_amb, params)

    s = scenario.s_ini
    t_s = 0.0
    energy = 0.0
    socs: list[float] = []
    powers: list[float] = []
    currents: list[float] = []
    sigma = cfg.noise_sigma
    while s < scenario.s_final:
        p = _delivered_power(s, scenario, cfg, params, p_eff, eta)
        if sigma > 0.0:
            p *= math.exp(sigma * rng.standard_normal())
        if p < cfg.power_floor_kw:
            raise SimulationError(
                f"power fell to {p:.4f} kW at SoC {s:.4f} (floor {cfg.power_floor_kw} kW)"
            )
        socs.append(s)
        powers.append(p)
        currents.append(p / pack_voltage(s, spec))
        ds = p * cfg.dt / (3600.0 * c_eff)
        if s + ds >= scenario.s_final:
            dt_last = (scenario.s_final - s) * 3600.0 * c_eff / p
            t_s += dt_last
            energy += p * dt_last / 3600.0
            s = scenario.s_final
        else:
            t_s += cfg.dt
            energy += p * cfg.dt / 3600.0
            s += ds
    return SessionTrace(
        scenario=scenario,
        soc_grid=np.array(socs),
        power_kw=np.array(powers),
        current_a=np.array(currents),
        t_c_true=t_s / 60.0,
        energy_kwh=energy,
    )


def _sample_scenario(rng: np.random.Generator, platform: Platform,
                     design: SamplingDesign) -> tuple[ChargingScenario, PhysicsParams]:
    s_ini = float(rng.uniform(*design.s_ini_range))
    if rng.uniform() < design.topup_prob and s_ini < design.topup_s_ini_max:
        s_final = float(rng.uniform(*design.topup_s_final_range))
    else:
        s_final = float(rng.uniform(s_ini + design.min_delta_s, design.s_final_max))
    tiers = np.array([kw for kw, _ in platform.station_tiers])
    weights = np.array([w for _, w in platform.station_tiers])
    tier = tiers[rng.choice(len(tiers), p=weights / weights.sum())]
    p_station = float(max(design.station_min_kw,
                          tier * rng.uniform(*design.station_derate_range)))
    t_amb = float(rng.uniform(*design.t_amb_range))
    soh = float(rng.uniform(*design.soh_range))
    # degraded packs taper less predictably: jitter width grows with fade
    jitter = design.k_jitter_base + design.k_jitter_soh_slope * (1.0 - soh)
    k = float(np.clip(platform.k_taper_base + rng.uniform(-1.0, 1.0) * jitter, *design.k_range))
    scenario = ChargingScenario(
        s_ini=s_ini, s_final=s_final, p_station=p_station,
        soh=soh, t_amb=t_amb, vehicle=platform.spec,
    )
    return scenario, PhysicsParams(k_taper=k)


def generate_dataset(n: int, cfg: SimulatorConfig = SimulatorConfig(),
                     catalog: Catalog | None = None) -> Dataset:
    """Draw and simulate ``n`` sessions. Deterministic for a fixed seed:
    session i uses the RNG stream seeded (cfg.seed, i)."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    if catalog is None:
        catalog = load_catalog()
    records = []
    for i in range(n):
        rng = np.random.default_rng([cfg.seed, i])
        platform = catalog.platforms[rng.integers(len(catalog.platforms))]
        scenario, params = _sample_scenario(rng, platform, catalog.sampling)
        trace = simulate_session(scenario, cfg, params, rng)
        records.append(SessionRecord(trace=trace, category=platform.category, params=params))
    return Dataset(records)


def stratified_split(ds: Dataset, fractions: tuple[float, float, float],
                     seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Partition into train/val/test, stratified by vehicle category."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    by_cat: dict[str, list[int]] = {}
    for i, rec in enumerate(ds.records):
        by_cat.setdefault(rec.category, []).append(i)
    names = ("train", "val", "test")
    assigned: dict[int, str] = {}
    for cat in sorted(by_cat):
        idx = np.array(by_cat[cat])
        if len(idx) < 3:
            raise ValueError(f"category {cat!r} has only {len(idx)} sessions; need >= 3")
        idx = idx[rng.permutation(len(idx))]
        n_tr = round(fractions[0] * len(idx))
        n_val = round(fractions[1] * len(idx))
        n_val = min(n_val, len(idx) - n_tr)
        for j, i in enumerate(idx):
            assigned[int(i)] = names[0] if j < n_tr else names[1] if j < n_tr + n_val else names[2]
    out = {name: [] for name in names}
    for i, rec in enumerate(ds.records):
        split = assigned[i]
        out[split].append(replace(rec, split=split))
    return Dataset(out["train"]), Dataset(out["val"]), Dataset(out["test"])


def sample_training_rows(records: list[SessionRecord], rows_per_session: int = 10,
                         seed: int = 0) -> dict[str, np.ndarray]:
    """Draw (SoC, observed power) rows for power-regressor training.

    SoC points are uniform over each session's window (matching the
    inference grid's distribution); power is interpolated from the trace.
    """
    rng = np.random.default_rng(seed)
    cols = {k: [] for k in ("s", "soh", "t_amb", "p_station", "c_nom", "p_max_nom", "power_kw")}
    for rec in records:
        tr = rec.trace
        sc = tr.scenario
        s_pts = np.sort(rng.uniform(sc.s_ini, sc.s_final, size=rows_per_session))
        p_pts = np.interp(s_pts, tr.soc_grid, tr.power_kw)
        cols["s"].append(s_pts)
        cols["soh"].append(np.full(rows_per_session, sc.soh))
        cols["t_amb"].append(np.full(rows_per_session, sc.t_amb))
        cols["p_station"].append(np.full(rows_per_session, sc.p_station))
        cols["c_nom"].append(np.full(rows_per_session, sc.vehicle.c_bat_nom))
        cols["p_max_nom"].append(np.full(rows_per_session, sc.vehicle.p_max_nom))
        cols["power_kw"].append(p_pts)
    return {k: np.concatenate(v) for k, v in cols.items()}


def save_dataset(ds: Dataset, out_dir: str | Path) -> None:
    """Write sessions.csv (one row per SoC sample) and sessions.json
    (session-level sidecar). Byte-identical across reruns."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sessions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for sid, rec in enumerate(ds.records):
            tr = rec.trace
            sc = tr.scenario
            const = (repr(float(sc.soh)), repr(float(sc.t_amb)), repr(float(sc.p_station)),
                     repr(float(sc.vehicle.c_bat_nom)), repr(float(sc.vehicle.p_max_nom)),
                     repr(float(sc.vehicle.p_cable)))
            v_nom = repr(float(sc.vehicle.v_nom))
            for s, p, i in zip(tr.soc_grid, tr.power_kw, tr.current_a):
                w.writerow((sid, repr(float(s)), *const, repr(float(p)), repr(float(i)), v_nom))
    sessions = []
    for sid, rec in enumerate(ds.records):
        tr = rec.trace
        sc = tr.scenario
        sessions.append({
            "session_id": sid,
            "category": rec.category,
            "split": rec.split,
            "t_c_true": tr.t_c_true,
            "energy_kwh": tr.energy_kwh,
            "s_ini": sc.s_ini,
            "s_final": sc.s_final,
            "p_station": sc.p_station,
            "soh": sc.soh,
            "t_amb": sc.t_amb,
            "c_bat_nom": sc.vehicle.c_bat_nom,
            "p_max_nom": sc.vehicle.p_max_nom,
            "v_nom": sc.vehicle.v_nom,
            "p_cable": sc.vehicle.p_cable,
            "beta": sc.vehicle.beta,
            "k_taper": rec.params.k_taper,
            "s_cv": rec.params.s_cv,
        })
    payload = {"format_version": DATASET_FORMAT_VERSION, "sessions": sessions}
    with open(out / "sessions.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(in_dir: str | Path) -> Dataset:
    """Rebuild a Dataset from save_dataset output."""
    src = Path(in_dir)
    meta = json.loads((src / "sessions.json").read_text())
    if meta["format_version"] != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format_version {meta['format_version']}")
    per_session: dict[int, dict[str, list[float]]] = {}
    with open(src / "sessions.csv", newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV columns {header}")
        for row in r:
            sid = int(row[0])
            d = per_session.setdefault(sid, {"s": [], "p": [], "i": []})
            d["s"].append(float(row[1]))
            d["p"].append(float(row[8]))
            d["i"].append(float(row[9]))
    records = []
    for info in meta["sessions"]:
        sid = info["session_id"]
        spec = VehicleSpec(
            c_bat_nom=info["c_bat_nom"], p_max_nom=info["p_max_nom"],
            v_nom=info["v_nom"], p_cable=info["p_cable"], beta=info["beta"],
        )
        scenario = ChargingScenario(
            s_ini=info["s_ini"], s_final=info["s_final"], p_station=info["p_station"],
            soh=info["soh"], t_amb=info["t_amb"], vehicle=spec,
        )
        d = per_session[sid]
        trace = SessionTrace(
            scenario=scenario,
            soc_grid=np.array(d["s"]),
            power_kw=np.array(d["p"]),
            current_a=np.array(d["i"]),
            t_c_true=info["t_c_true"],
            energy_kwh=info["energy_kwh"],
        )
        records.append(SessionRecord(
            trace=trace, category=info["category"],
            params=PhysicsParams(s_cv=info["s_cv"], k_taper=info["k_taper"]),
            split=info["split"],
        ))
    return Dataset(records)
