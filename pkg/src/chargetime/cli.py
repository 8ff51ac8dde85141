"""Command-line surface: generate / split / train-analytical / train-rl /
predict / evaluate / report.

Every command is deterministic under a fixed config+seed; the only
timestamp lives in the report manifest. Exit codes: 0 success, 1
validation error, 2 IO error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import evaluation, gbm
from .features import apply_scaler, engineer_matrix, fit_scaler
from .orchestrator import HybridPredictor, OrchestratorConfig, epsilon_for, stage_for
from .physics import ChargingScenario, DomainError, VehicleSpec
from .predictor import (
    IntegrationConfig,
    analytical_power_model,
    linear_baseline_time,
    predict_charging_time,
)
from .rl.inference import greedy_power_profiles
from .rl.training import DQNConfig, TrainingHistory, load_agent, save_agent, train_agent
from .simulator import (
    Dataset,
    SimulatorConfig,
    generate_dataset,
    load_catalog,
    load_dataset,
    sample_training_rows,
    save_dataset,
    stratified_split,
)

OUTPUT_DIR_ENV = "CHARGETIME_OUTPUT_DIR"

TABLE1_GRID = {
    "m_trees": [100, 500, 1000, 2000],
    "max_depth": [5, 7, 10, 15, 20],
    "learning_rate": [0.01, 0.03, 0.05, 0.1],
    "min_split": [2, 5, 10],
}

PAPER_SCALE_EPISODES = 8000
DESK_SCALE_EPISODES = 2000


class ValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse exits 2 by default; bad flags are validation errors here
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# config file handling


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise ValidationError("config file must hold a JSON object")
    return cfg


def _cfg_get(cfg: dict, section: str, key: str, fallback):
    return cfg.get(section, {}).get(key, fallback)


def _out_dir(args) -> Path:
    out = getattr(args, "out", None) or os.environ.get(OUTPUT_DIR_ENV)
    if out is None:
        raise ValidationError("no output location: pass --out or set " + OUTPUT_DIR_ENV)
    return Path(out)


# --------------------------------------------------------------------------
# training-row pipeline shared by commands


def _fit_analytical(train_records, gbm_cfg: gbm.GBMConfig, rows_per_session: int,
                    seed: int, cv: bool = False, cv_rows: int = 5000):
    rows = sample_training_rows(train_records, rows_per_session=rows_per_session, seed=seed)
    X_raw = engineer_matrix(rows["s"], rows["soh"], rows["t_amb"], rows["p_station"],
                            rows["c_nom"], rows["p_max_nom"])
    y = rows["power_kw"]
    scaler = fit_scaler(X_raw)
    X = apply_scaler(scaler, X_raw)
    cv_table = None
    if cv:
        n = min(cv_rows, X.shape[0])
        rng = np.random.default_rng(seed)
        idx = rng.choice(X.shape[0], size=n, replace=False)
        gbm_cfg, cv_table = gbm.cross_validate(X[idx], y[idx], TABLE1_GRID,
                                               base_cfg=gbm_cfg, seed=seed)
    ens = gbm.fit(X, y, gbm_cfg, scaler=scaler)
    return ens, cv_table


def _analytical_times(ens, records, n_points: int) -> np.ndarray:
    icfg = IntegrationConfig(n_points=n_points)
    out = np.empty(len(records))
    for i, rec in enumerate(records):
        model = analytical_power_model(ens, rec.trace.scenario)
        out[i] = predict_charging_time(rec.trace.scenario, model, icfg).t_c
    return out


def _rl_times(agent, records, n_points: int) -> np.ndarray:
    scenarios = [rec.trace.scenario for rec in records]
    profiles, grids = greedy_power_profiles(agent, scenarios, n_points=n_points)
    out = np.empty(len(records))
    for i, rec in enumerate(records):
        sc = rec.trace.scenario
        c_eff = sc.vehicle.c_bat_nom * sc.soh
        ds = (sc.s_final - sc.s_ini) / n_points
        out[i] = 60.0 * float(np.sum(c_eff * ds / profiles[i]))
    return out


# --------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    cfg = _load_config_file(args.config)
    n = args.n if args.n is not None else _cfg_get(cfg, "dataset", "n", 5000)
    seed = args.seed if args.seed is not None else _cfg_get(cfg, "dataset", "seed", 42)
    noise = args.noise if args.noise is not None else _cfg_get(cfg, "dataset", "noise_sigma", 0.01)
    fractions = tuple(args.fractions or _cfg_get(cfg, "dataset", "fractions", (0.64, 0.16, 0.20)))
    catalog = load_catalog(args.catalog) if args.catalog else None
    out = _out_dir(args)
    sim_cfg = SimulatorConfig(noise_sigma=noise, seed=seed)
    ds = generate_dataset(n, sim_cfg, catalog)
    train, val, test = stratified_split(ds, fractions, seed=seed)
    tagged = Dataset(train.records + val.records + test.records)
    save_dataset(tagged, out)
    counts = {s: len(tagged.by_split(s)) for s in ("train", "val", "test")}
    print(f"generated {len(ds)} sessions -> {out}")
    print(f"split sizes: train={counts['train']} val={counts['val']} test={counts['test']}")
    return 0


def cmd_split(args) -> int:
    ds = load_dataset(args.dataset)
    fractions = tuple(args.fractions or (0.64, 0.16, 0.20))
    train, val, test = stratified_split(ds, fractions, seed=args.seed or 0)
    tagged = Dataset(train.records + val.records + test.records)
    out = _out_dir(args)
    save_dataset(tagged, out)
    print(f"re-split {len(ds)} sessions -> {out}")
    return 0


def cmd_train_analytical(args) -> int:
    cfg = _load_config_file(args.config)
    ds = load_dataset(args.dataset)
    train = ds.by_split("train")
    if len(train) == 0:
        raise ValidationError("dataset has no train split; run `generate` or `split` first")
    gbm_cfg = gbm.GBMConfig(
        m_trees=_cfg_get(cfg, "gbm", "m_trees", 1000),
        max_depth=_cfg_get(cfg, "gbm", "max_depth", 10),
        learning_rate=_cfg_get(cfg, "gbm", "learning_rate", 0.03),
        min_split=_cfg_get(cfg, "gbm", "min_split", 2),
        seed=args.seed,
    )
    if args.m_trees is not None:
        gbm_cfg = replace(gbm_cfg, m_trees=args.m_trees)
    ens, cv_table = _fit_analytical(train.records, gbm_cfg, args.rows_per_session,
                                    args.seed, cv=args.cv, cv_rows=args.cv_rows)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "analytical.json"
    gbm.save_model(ens, model_path)
    if cv_table is not None:
        with open(out / "cv_table.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("param", "value", "mean_r2"))
            for row in cv_table:
                w.writerow((row["param"], row["value"], repr(row["mean_r2"])))
        print(f"cv sweep done; selected {ens.config}")
    print(f"trained on {len(train)} sessions "
          f"({args.rows_per_session} rows each); model -> {model_path}")
    print(f"final train mse: {ens.train_mse[-1]:.6f}")
    return 0


def cmd_train_rl(args) -> int:
    cfg = _load_config_file(args.config)
    ds = load_dataset(args.dataset)
    train = ds.by_split("train")
    if len(train) == 0:
        raise ValidationError("dataset has no train split")
    ens = gbm.load_model(args.model)
    episodes = args.episodes
    if args.paper_scale:
        episodes = PAPER_SCALE_EPISODES
    dqn_cfg = DQNConfig(
        learning_rate=_cfg_get(cfg, "dqn", "learning_rate", 1e-4),
        gamma=_cfg_get(cfg, "dqn", "gamma", 0.99),
        buffer_capacity=_cfg_get(cfg, "dqn", "buffer_capacity", 50_000),
        batch_size=_cfg_get(cfg, "dqn", "batch_size", 128),
        init_buffer=_cfg_get(cfg, "dqn", "init_buffer", 1000),
        update_every=_cfg_get(cfg, "dqn", "update_every", 1),
        seed=args.seed,
    )
    print(f"seeding replay buffer with {dqn_cfg.init_buffer} analytical-rollout transitions")
    net, history = train_agent(
        train.records, lambda sc: analytical_power_model(ens, sc),
        dqn_cfg, episodes=episodes,
        epsilon_schedule=lambda ep: epsilon_for(min(500 + ep, 10 ** 9)),
    )
    for mark in (500, 1500):
        if episodes + 500 > mark:
            print(f"stage {stage_for(mark).value} entered at sample count {mark}")
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    save_agent(out / "agent.bin", net, dqn_cfg)
    history.to_csv(out / "history.csv")
    print(f"trained {len(history.episode)} episodes; agent -> {out / 'agent.bin'}")
    return 0


def _scenario_from_args(args) -> ChargingScenario:
    vehicle = VehicleSpec(
        c_bat_nom=args.capacity, p_max_nom=args.power, v_nom=args.vnom,
        p_cable=args.cable,
    )
    return ChargingScenario(
        s_ini=getattr(args, "from"), s_final=args.to, p_station=args.station,
        soh=args.soh, t_amb=args.temp, vehicle=vehicle,
    )


def cmd_predict(args) -> int:
    scenario = _scenario_from_args(args)
    icfg = IntegrationConfig(n_points=args.n_points)
    if args.model == "linear":
        t_c = linear_baseline_time(scenario)
        payload = {"t_c_minutes": t_c, "provenance": "linear"}
    elif args.hybrid is not None:
        hp = HybridPredictor.load(args.hybrid, OrchestratorConfig(integration=icfg))
        result, provenance = hp.predict(scenario)
        payload = result.to_dict(include_profiles=args.profile)
        payload["provenance"] = provenance
    elif args.model is not None and Path(args.model).suffix == ".bin":
        from .rl.inference import greedy_power_model

        agent, _ = load_agent(args.model)
        result = predict_charging_time(scenario, greedy_power_model(agent, scenario), icfg)
        payload = result.to_dict(include_profiles=args.profile)
        payload["provenance"] = "rl"
    elif args.model is not None:
        ens = gbm.load_model(args.model)
        result = predict_charging_time(scenario, analytical_power_model(ens, scenario), icfg)
        payload = result.to_dict(include_profiles=args.profile)
        payload["provenance"] = "analytical"
    else:
        raise ValidationError("pass --model PATH|linear or --hybrid DIR")
    print(json.dumps(payload, indent=1, sort_keys=True))
    return 0


def _table3(ds_test, ens, agent, n_points):
    y_true = evaluation.true_times(ds_test.records)
    rows = []
    t_lin = np.array([linear_baseline_time(r.trace.scenario) for r in ds_test.records])
    rows.append(("linear", evaluation.metrics(y_true, t_lin), t_lin))
    t_an = _analytical_times(ens, ds_test.records, n_points)
    rows.append(("analytical", evaluation.metrics(y_true, t_an), t_an))
    if agent is not None:
        t_rl = _rl_times(agent, ds_test.records, n_points)
        rows.append(("rl", evaluation.metrics(y_true, t_rl), t_rl))
    return y_true, rows


def _write_table3(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("model", "r2", "rmse_min", "mae_min", "mape_pct", "max_e_min"))
        for name, m, _preds in rows:
            w.writerow((name, repr(m.r2), repr(m.rmse), repr(m.mae), repr(m.mape), repr(m.max_e)))


def cmd_evaluate(args) -> int:
    ds = load_dataset(args.dataset)
    test = ds.by_split("test")
    if len(test) == 0:
        raise ValidationError("dataset has no test split")
    ens = gbm.load_model(args.analytical)
    agent = load_agent(args.agent)[0] if args.agent else None
    _y_true, rows = _table3(test, ens, agent, args.n_points)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    _write_table3(out / "table3_metrics.csv", rows)
    for name, m, _ in rows:
        print(f"{name:12s} r2={m.r2:.4f} rmse={m.rmse:.2f} mae={m.mae:.2f} "
              f"mape={m.mape:.2f}% max_e={m.max_e:.2f}")
    print(f"metrics table -> {out / 'table3_metrics.csv'}")
    return 0


def cmd_report(args) -> int:
    ds = load_dataset(args.dataset)
    train, test = ds.by_split("train"), ds.by_split("test")
    if len(test) == 0 or len(train) == 0:
        raise ValidationError("dataset needs train and test splits")
    ens = gbm.load_model(args.analytical)
    agent = load_agent(args.agent)[0] if args.agent else None
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    files = {}

    # Table 3 analog + per-session trajectories (fig 1 analog)
    y_true, rows = _table3(test, ens, agent, args.n_points)
    _write_table3(out / "table3_metrics.csv", rows)
    files["table3_metrics.csv"] = "test-set accuracy table (Table 3 analog)"
    with open(out / "fig1_predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("session", "t_true_min") + tuple(f"t_{name}_min" for name, _, _ in rows))
        preds = [p for _, _, p in rows]
        for i, t in enumerate(y_true):
            w.writerow((i, repr(float(t))) + tuple(repr(float(p[i])) for p in preds))
    files["fig1_predictions.csv"] = "per-session predictions vs truth (Fig 1 analog)"

    # SoH robustness (fig 3 analog)
    soh = np.array([r.trace.scenario.soh for r in test.records])
    with open(out / "fig3_soh_robustness.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("model", "soh_lo", "soh_hi", "mape_pct", "n", "relative_growth"))
        for name, _m, preds in rows:
            per_bin, growth = evaluation.soh_stratified_eval(y_true, preds, soh)
            for (lo, hi), m in sorted(per_bin.items()):
                w.writerow((name, lo, hi, "" if m is None else repr(m.mape),
                            0 if m is None else m.n,
                            "" if growth is None else repr(growth)))
    files["fig3_soh_robustness.csv"] = "per-SoH-bin MAPE and growth (Fig 3 analog)"

    # feature importance (figs 4-5 analog)
    imp, rollup = gbm.feature_importance(ens)
    from .features import FEATURE_NAMES

    with open(out / "fig4_category_importance.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("category", "importance"))
        for cat, v in sorted(rollup.items(), key=lambda kv: -kv[1]):
            w.writerow((cat, repr(v)))
    files["fig4_category_importance.csv"] = "category-level importance (Fig 4 analog)"
    order = np.argsort(imp)[::-1][:15]
    with open(out / "fig5_top_features.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("feature", "importance"))
        for j in order:
            w.writerow((FEATURE_NAMES[j], repr(float(imp[j]))))
    files["fig5_top_features.csv"] = "top 15 individual features (Fig 5 analog)"

    # learning curves (fig 2 analog)
    sizes = [int(s) for s in args.curve_sizes.split(",") if int(s) <= len(train)]
    if len(sizes) >= 2:
        gbm_cfg = replace(ens.config, m_trees=min(ens.config.m_trees, args.curve_trees))

        def train_an(records, seed):
            sub_ens, _ = _fit_analytical(records, replace(gbm_cfg, seed=seed),
                                         args.rows_per_session, seed)
            return sub_ens

        def eval_an(model):
            m = evaluation.metrics(y_true, _analytical_times(model, test.records, args.n_points))
            return {"r2": m.r2, "mape": m.mape}

        curve_an = evaluation.learning_curve(train_an, train.records, eval_an,
                                             sizes, runs=args.curve_runs, seed=args.seed)
        curves = {"analytical": curve_an}
        if agent is not None:
            def train_rl(records, seed):
                cfg = DQNConfig(seed=seed, update_every=2)
                eps = min(args.curve_episodes, 2 * len(records))
                net, _ = train_agent(records, lambda sc: analytical_power_model(ens, sc),
                                     cfg, episodes=eps)
                return net

            def eval_rl(net):
                m = evaluation.metrics(y_true, _rl_times(net, test.records, args.n_points))
                return {"r2": m.r2, "mape": m.mape}

            curves["rl"] = evaluation.learning_curve(train_rl, train.records, eval_rl,
                                                     sizes, runs=args.curve_runs,
                                                     seed=args.seed + 1)
        with open(out / "fig2_learning_curves.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("model", "size", "metric", "mean", "ci95_halfwidth"))
            for name, curve in curves.items():
                for metric, (mean, ci) in curve.curves.items():
                    for s, mu, c in zip(curve.sizes, mean, ci):
                        w.writerow((name, s, metric, repr(float(mu)), repr(float(c))))
        files["fig2_learning_curves.csv"] = "learning curves with 95% CI (Fig 2 analog)"

    # training stability (fig 6 analog)
    if args.history:
        history = TrainingHistory.from_csv(args.history)
        summary = evaluation.training_stability_report(
            history, agent=agent, records=test.records[:200] if agent else None)
        with open(out / "fig6_training_stability.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("episode", "reward", "mean_q", "epsilon", "loss"))
            for row in zip(history.episode, history.reward, history.mean_q,
                           history.epsilon, history.loss):
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        files["fig6_training_stability.csv"] = "reward/Q/epsilon/loss traces (Fig 6 analog)"
        if "state_mae_grid" in summary:
            with open(out / "fig6_state_mae_grid.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(("soh_bin_lo", "soh_bin_hi", "soc_bin_lo", "soc_bin_hi", "mae_kw"))
                g = summary["state_mae_grid"]
                es, eh = summary["state_mae_soc_edges"], summary["state_mae_soh_edges"]
                for bi in range(g.shape[0]):
                    for bj in range(g.shape[1]):
                        w.writerow((repr(float(eh[bi])), repr(float(eh[bi + 1])),
                                    repr(float(es[bj])), repr(float(es[bj + 1])),
                                    "" if np.isnan(g[bi, bj]) else repr(float(g[bi, bj]))))
            files["fig6_state_mae_grid.csv"] = "greedy-policy power MAE over SoC x SoH (Fig 6 analog)"

    manifest = {
        "format_version": 1,
        "generated_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"report with {len(files)} artifacts -> {out}")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="chargetime", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a session dataset and split it")
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--noise", type=float)
    g.add_argument("--fractions", type=lambda s: tuple(float(x) for x in s.split(",")))
    g.add_argument("--catalog")
    g.add_argument("--config")
    g.add_argument("--out")
    g.set_defaults(fn=cmd_generate)

    s = sub.add_parser("split", help="re-split an existing dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--fractions", type=lambda x: tuple(float(v) for v in x.split(",")))
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_split)

    ta = sub.add_parser("train-analytical", help="fit the boosted power model")
    ta.add_argument("--dataset", required=True)
    ta.add_argument("--rows-per-session", type=int, default=10)
    ta.add_argument("--seed", type=int, default=0)
    ta.add_argument("--cv", action="store_true")
    ta.add_argument("--cv-rows", type=int, default=5000)
    ta.add_argument("--m-trees", type=int)
    ta.add_argument("--config")
    ta.add_argument("--out")
    ta.set_defaults(fn=cmd_train_analytical)

    tr = sub.add_parser("train-rl", help="train the DQN agent")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--model", required=True)
    tr.add_argument("--episodes", type=int, default=DESK_SCALE_EPISODES)
    tr.add_argument("--paper-scale", action="store_true")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--config")
    tr.add_argument("--out")
    tr.set_defaults(fn=cmd_train_rl)

    pr = sub.add_parser("predict", help="predict one session's charging time")
    pr.add_argument("--model", help="model JSON, agent .bin, or 'linear'")
    pr.add_argument("--hybrid", help="orchestrator state directory")
    pr.add_argument("--from", type=float, required=True)
    pr.add_argument("--to", type=float, required=True)
    pr.add_argument("--capacity", type=float, required=True)
    pr.add_argument("--power", type=float, required=True)
    pr.add_argument("--station", type=float, required=True)
    pr.add_argument("--soh", type=float, default=1.0)
    pr.add_argument("--temp", type=float, default=25.0)
    pr.add_argument("--cable", type=float, default=350.0)
    pr.add_argument("--vnom", type=float, default=400.0)
    pr.add_argument("--n-points", type=int, default=100)
    pr.add_argument("--profile", action="store_true")
    pr.set_defaults(fn=cmd_predict)

    ev = sub.add_parser("evaluate", help="test-split accuracy table")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--analytical", required=True)
    ev.add_argument("--agent")
    ev.add_argument("--n-points", type=int, default=100)
    ev.add_argument("--out")
    ev.set_defaults(fn=cmd_evaluate)

    rp = sub.add_parser("report", help="emit all table/figure analog CSVs")
    rp.add_argument("--dataset", required=True)
    rp.add_argument("--analytical", required=True)
    rp.add_argument("--agent")
    rp.add_argument("--history")
    rp.add_argument("--n-points", type=int, default=100)
    rp.add_argument("--rows-per-session", type=int, default=10)
    rp.add_argument("--curve-sizes", default="400,800,1600,3200")
    rp.add_argument("--curve-runs", type=int, default=3)
    rp.add_argument("--curve-trees", type=int, default=300)
    rp.add_argument("--curve-episodes", type=int, default=1200)
    rp.add_argument("--seed", type=int, default=0)
    rp.add_argument("--out")
    rp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
