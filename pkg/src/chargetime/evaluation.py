"""Accuracy metrics and the study harnesses built on them: SoH-stratified
robustness, learning curves with confidence bands, and RL training-run
summaries. All artifacts are plain dicts/arrays so the CLI can dump them
to CSV/JSON unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gbm import r2_score
from .simulator import Dataset, SessionRecord


@dataclass(frozen=True)
class Metrics:
    r2: float
    rmse: float
    mae: float
    mape: float
    max_e: float
    n: int

    def as_dict(self) -> dict:
        return {"r2": self.r2, "rmse": self.rmse, "mae": self.mae,
                "mape": self.mape, "max_e": self.max_e, "n": self.n}


def metrics(y_true, y_pred) -> Metrics:
    """Standard regression metrics; times in minutes, MAPE in percent."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.ndim != 1 or y_true.size == 0:
        raise ValueError("y_true and y_pred must be equal-length non-empty 1-d arrays")
    if np.any(y_true <= 0):
        raise ValueError("MAPE needs strictly positive y_true")
    err = y_pred - y_true
    return Metrics(
        r2=r2_score(y_true, y_pred),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        mae=float(np.mean(np.abs(err))),
        mape=float(np.mean(np.abs(err) / y_true) * 100.0),
        max_e=float(np.max(np.abs(err))),
        n=int(y_true.size),
    )


DEFAULT_SOH_BINS = ((0.7, 0.8), (0.8, 0.9), (0.9, 1.0))


def soh_stratified_eval(y_true, y_pred, soh, bins=DEFAULT_SOH_BINS):
    """Metrics within SoH bins, plus the relative MAPE growth from the
    healthiest bin to the most degraded one.

    The final bin's upper edge is inclusive so soh = 1.0 lands in it.
    Empty bins report None. Returns (per-bin dict, growth or None).
    """
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    soh = np.asarray(soh, dtype=float)
    per_bin: dict[tuple[float, float], Metrics | None] = {}
    top = max(hi for _, hi in bins)
    for lo, hi in bins:
        if hi >= top:
            mask = (soh >= lo) & (soh <= hi)
        else:
            mask = (soh >= lo) & (soh < hi)
        per_bin[(lo, hi)] = metrics(y_true[mask], y_pred[mask]) if mask.any() else None
    ordered = sorted(bins)
    degraded = per_bin[ordered[0]]
    healthy = per_bin[ordered[-1]]
    growth = None
    if degraded is not None and healthy is not None and healthy.mape > 0:
        growth = (degraded.mape - healthy.mape) / healthy.mape
    return per_bin, growth


@dataclass(frozen=True)
class LearningCurve:
    sizes: tuple[int, ...]
    # metric name -> (mean per size, 95% CI half-width per size)
    curves: dict[str, tuple[np.ndarray, np.ndarray]]
    runs: int


def learning_curve(train_fn, train_records: list[SessionRecord],
                   eval_fn, sizes, runs: int = 5, seed: int = 0) -> LearningCurve:
    """Subsample -> train -> evaluate, repeated ``runs`` times per size.

    ``train_fn(records, seed)`` returns a model handle;
    ``eval_fn(model)`` returns a dict of metric values on a fixed test
    set. CI half-width is 1.96 * sd / sqrt(runs).
    """
    sizes = tuple(int(s) for s in sizes)
    if any(s2 <= s1 for s1, s2 in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly increasing")
    if sizes[-1] > len(train_records):
        raise ValueError(f"largest size {sizes[-1]} exceeds {len(train_records)} records")
    cells: dict[str, np.ndarray] = {}
    for si, size in enumerate(sizes):
        for run in range(runs):
            rng = np.random.default_rng([seed, si, run])
            idx = rng.choice(len(train_records), size=size, replace=False)
            model = train_fn([train_records[i] for i in idx], int(rng.integers(2 ** 31)))
            result = eval_fn(model)
            for name, val in result.items():
                cells.setdefault(name, np.full((len(sizes), runs), np.nan))[si, run] = val
    curves = {}
    for name, grid in cells.items():
        mean = grid.mean(axis=1)
        sd = grid.std(axis=1, ddof=1) if runs > 1 else np.zeros(len(sizes))
        curves[name] = (mean, 1.96 * sd / math.sqrt(runs))
    return LearningCurve(sizes=sizes, curves=curves, runs=runs)


def training_stability_report(history, agent=None, records: list[SessionRecord] | None = None,
                              window: int = 50, soc_bins: int = 6, soh_bins: int = 3) -> dict:
    """Summarize an RL training run: windowed reward means, the mean-Q and
    epsilon traces, and, when an agent plus sessions are supplied, a
    SoC x SoH grid of greedy-policy power MAE."""
    if len(history.episode) == 0:
        raise ValueError("empty training history")
    rewards = np.asarray(history.reward, dtype=float)
    n = len(rewards)
    w = max(1, min(window, n))
    kernel = np.ones(w) / w
    summary = {
        "episodes": n,
        "window": w,
        "reward_windowed": np.convolve(rewards, kernel, mode="valid"),
        "mean_q": np.asarray(history.mean_q, dtype=float),
        "epsilon": np.asarray(history.epsilon, dtype=float),
        "loss": np.asarray(history.loss, dtype=float),
        "reward_first_window_mean": float(rewards[:w].mean()),
        "reward_last_window_mean": float(rewards[-w:].mean()),
    }
    if agent is not None and records:
        from .rl.inference import greedy_power_profiles

        scenarios = [rec.trace.scenario for rec in records]
        profiles, grids = greedy_power_profiles(agent, scenarios)
        edges_soc = np.linspace(0.0, 1.0, soc_bins + 1)
        edges_soh = np.linspace(0.7, 1.0, soh_bins + 1)
        grid_err = np.full((soh_bins, soc_bins), np.nan)
        grid_cnt = np.zeros((soh_bins, soc_bins), dtype=int)
        abs_err_sum = np.zeros((soh_bins, soc_bins))
        for rec, prof, sgrid in zip(records, profiles, grids):
            true_p = np.interp(sgrid, rec.trace.soc_grid, rec.trace.power_kw)
            bi = min(soh_bins - 1, int(np.searchsorted(edges_soh, rec.trace.scenario.soh,
                                                       side="right") - 1))
            bi = max(0, bi)
            sj = np.clip(np.searchsorted(edges_soc, sgrid, side="right") - 1, 0, soc_bins - 1)
            for j, e in zip(sj, np.abs(prof - true_p)):
                abs_err_sum[bi, j] += e
                grid_cnt[bi, j] += 1
        nonzero = grid_cnt > 0
        grid_err[nonzero] = abs_err_sum[nonzero] / grid_cnt[nonzero]
        summary["state_mae_grid"] = grid_err
        summary["state_mae_soc_edges"] = edges_soc
        summary["state_mae_soh_edges"] = edges_soh
    return summary


def predicted_times(predict_fn, records: list[SessionRecord]) -> np.ndarray:
    """Apply a scenario -> minutes predictor over a list of sessions."""
    return np.array([predict_fn(rec.trace.scenario) for rec in records])


def true_times(records: list[SessionRecord]) -> np.ndarray:
    return np.array([rec.trace.t_c_true for rec in records])
