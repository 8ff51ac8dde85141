"""Gradient-boosted regression trees, built from scratch.

Squared-error boosting (each tree fits the residual of the running
ensemble), exact greedy split search over midpoints of sorted unique
feature values, no subsampling or shrinkage beyond the learning rate.
Determinism: split ties break to the lowest feature index, then the
lowest threshold.

The tree grower and the ensemble predictor are numba kernels; everything
else is plain numpy. The predictor walks trees in a branchless, 4-way
pipelined descent (children are allocated adjacently, so a comparison
resolves to left + 0/1); leaves self-loop with an infinite threshold so
the walk runs a fixed max_depth iterations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit

from .features import FEATURE_CATEGORIES, FEATURE_NAMES, FEATURE_ORDER_VERSION, Scaler

MODEL_FORMAT_VERSION = 1
_NO_FEATURE = -1
_GAIN_EPS = 1e-12


@dataclass(frozen=True)
class GBMConfig:
    m_trees: int = 1000
    max_depth: int = 10
    learning_rate: float = 0.03
    min_split: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.m_trees < 1:
            raise ValueError(f"m_trees must be >= 1, got {self.m_trees}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if self.min_split < 2:
            raise ValueError(f"min_split must be >= 2, got {self.min_split}")


@dataclass(frozen=True)
class Tree:
    """One regression tree in flat arrays; node 0 is the root, children of
    a split node are adjacent (right == left + 1), leaves have feature -1."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass
class TreeEnsemble:
    f0: float
    nu: float
    trees: list[Tree]
    config: GBMConfig
    n_features: int
    scaler: Scaler | None = None
    train_mse: list[float] = field(default_factory=list)
    split_gain: np.ndarray | None = None
    _packed: tuple | None = field(default=None, repr=False, compare=False)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return predict_batch(self, X)


@njit(cache=True)
def _grow_tree(XT, r, presort, max_depth, min_split):
    """Level-wise exact greedy CART on residuals.

    XT is (n_features, n_rows); presort[f] holds row indices sorted by
    feature f. Returns flat node arrays, per-split gains, and each row's
    final leaf id.
    """
    n_feat, n = XT.shape
    max_nodes = 2 ** (max_depth + 1) - 1
    feat = np.full(max_nodes, _NO_FEATURE, np.int32)
    thr = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int32)
    value = np.zeros(max_nodes, np.float64)
    gain_out = np.zeros(max_nodes, np.float64)

    node_of_row = np.zeros(n, np.int32)
    n_nodes = 1
    node_cnt = np.zeros(max_nodes, np.int64)
    node_sum = np.zeros(max_nodes, np.float64)
    node_cnt[0] = n
    node_sum[0] = r.sum()

    level_nodes = np.empty(max_nodes, np.int32)
    level_nodes[0] = 0
    n_level = 1

    width = 2 ** max_depth
    slot_of_node = np.full(max_nodes, -1, np.int32)
    best_gain = np.empty(width, np.float64)
    best_feat = np.empty(width, np.int32)
    best_thr = np.empty(width, np.float64)
    seen_cnt = np.empty(width, np.int64)
    seen_sum = np.empty(width, np.float64)
    last_x = np.empty(width, np.float64)

    for _depth in range(max_depth):
        if n_level == 0:
            break
        n_active = 0
        for i in range(n_level):
            nd = level_nodes[i]
            if node_cnt[nd] >= min_split:
                slot_of_node[nd] = n_active
                n_active += 1
        if n_active == 0:
            break
        for a in range(n_active):
            best_gain[a] = -np.inf
            best_feat[a] = _NO_FEATURE

        for f in range(n_feat):
            for a in range(n_active):
                seen_cnt[a] = 0
                seen_sum[a] = 0.0
                last_x[a] = 0.0
            col = XT[f]
            order = presort[f]
            for pos in range(n):
                row = order[pos]
                nd = node_of_row[row]
                a = slot_of_node[nd]
                if a < 0:
                    continue
                x = col[row]
                if seen_cnt[a] > 0 and x > last_x[a]:
                    nl = seen_cnt[a]
                    nr = node_cnt[nd] - nl
                    sl = seen_sum[a]
                    sr = node_sum[nd] - sl
                    g = sl * sl / nl + sr * sr / nr
                    if g > best_gain[a]:
                        best_gain[a] = g
                        best_feat[a] = f
                        t = last_x[a] + 0.5 * (x - last_x[a])
                        if t >= x:
                            t = last_x[a]
                        best_thr[a] = t
                seen_cnt[a] += 1
                seen_sum[a] += r[row]
                last_x[a] = x

        first_new = n_nodes
        for i in range(n_level):
            nd = level_nodes[i]
            a = slot_of_node[nd]
            if a < 0:
                continue
            parent_ss = node_sum[nd] * node_sum[nd] / node_cnt[nd]
            if best_feat[a] >= 0 and best_gain[a] - parent_ss > _GAIN_EPS:
                feat[nd] = best_feat[a]
                thr[nd] = best_thr[a]
                left[nd] = n_nodes
                gain_out[nd] = best_gain[a] - parent_ss
                n_nodes += 2
        for i in range(n_level):
            slot_of_node[level_nodes[i]] = -1
        n_next = n_nodes - first_new
        if n_next == 0:
            break
        for c in range(first_new, n_nodes):
            node_cnt[c] = 0
            node_sum[c] = 0.0
        for row in range(n):
            nd = node_of_row[row]
            if feat[nd] >= 0:
                if XT[feat[nd], row] <= thr[nd]:
                    nd = left[nd]
                else:
                    nd = left[nd] + 1
                node_of_row[row] = nd
                node_cnt[nd] += 1
                node_sum[nd] += r[row]
        for i in range(n_next):
            level_nodes[i] = first_new + i
        n_level = n_next

    for nd in range(n_nodes):
        if feat[nd] == _NO_FEATURE and node_cnt[nd] > 0:
            value[nd] = node_sum[nd] / node_cnt[nd]
    return (feat[:n_nodes].copy(), thr[:n_nodes].copy(), left[:n_nodes].copy(),
            value[:n_nodes].copy(), gain_out[:n_nodes].copy(), node_of_row)


@njit(cache=True)
def _predict_kernel(Xq, starts, F, L, T, V, max_depth):
    nq = Xq.shape[0]
    n_trees = starts.shape[0] - 1
    out = np.zeros(nq)
    for m in range(n_trees):
        base = starts[m]
        i = 0
        while i + 4 <= nq:
            k0 = base
            k1 = base
            k2 = base
            k3 = base
            for _ in range(max_depth):
                k0 = base + L[k0] + (Xq[i, F[k0]] > T[k0])
                k1 = base + L[k1] + (Xq[i + 1, F[k1]] > T[k1])
                k2 = base + L[k2] + (Xq[i + 2, F[k2]] > T[k2])
                k3 = base + L[k3] + (Xq[i + 3, F[k3]] > T[k3])
            out[i] += V[k0]
            out[i + 1] += V[k1]
            out[i + 2] += V[k2]
            out[i + 3] += V[k3]
            i += 4
        while i < nq:
            k = base
            for _ in range(max_depth):
                k = base + L[k] + (Xq[i, F[k]] > T[k])
            out[i] += V[k]
            i += 1
    return out


def _pack(ens: TreeEnsemble):
    """Concatenate all trees into the kernel layout (leaves self-loop)."""
    if ens._packed is not None:
        return ens._packed
    sizes = [t.n_nodes for t in ens.trees]
    starts = np.zeros(len(sizes) + 1, np.int64)
    np.cumsum(sizes, out=starts[1:])
    total = int(starts[-1])
    F = np.zeros(total, np.int8)
    L = np.zeros(total, np.int32)
    T = np.zeros(total, np.float64)
    V = np.zeros(total, np.float64)
    for m, t in enumerate(ens.trees):
        lo = int(starts[m])
        hi = lo + t.n_nodes
        is_leaf = t.feature < 0
        F[lo:hi] = np.where(is_leaf, 0, t.feature).astype(np.int8)
        L[lo:hi] = np.where(is_leaf, np.arange(t.n_nodes), t.left).astype(np.int32)
        T[lo:hi] = np.where(is_leaf, np.inf, t.threshold)
        V[lo:hi] = np.where(is_leaf, t.value, 0.0)
    ens._packed = (starts, F, L, T, V)
    return ens._packed


def predict_batch(ens: TreeEnsemble, X: np.ndarray) -> np.ndarray:
    """Ensemble prediction for a feature matrix; kW per row."""
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    if X.shape[1] != ens.n_features:
        raise ValueError(f"expected {ens.n_features} features, got {X.shape[1]}")
    if not ens.trees:
        return np.full(X.shape[0], ens.f0)
    starts, F, L, T, V = _pack(ens)
    sums = _predict_kernel(X, starts, F, L, T, V, ens.config.max_depth)
    return ens.f0 + ens.nu * sums


def predict(ens: TreeEnsemble, x: np.ndarray) -> float:
    """Single-row prediction."""
    return float(predict_batch(ens, np.asarray(x, dtype=float).reshape(1, -1))[0])


def predict_batch_reference(ens: TreeEnsemble, X: np.ndarray) -> np.ndarray:
    """Pure-numpy per-tree descent; the independent check on the kernel."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.full(X.shape[0], ens.f0)
    rows = np.arange(X.shape[0])
    for t in ens.trees:
        node = np.zeros(X.shape[0], np.int64)
        for _ in range(ens.config.max_depth):
            f = t.feature[node]
            live = f >= 0
            if not live.any():
                break
            go_right = np.zeros_like(live)
            go_right[live] = X[rows[live], f[live]] > t.threshold[node[live]]
            node = np.where(live, t.left[node] + go_right, node)
        out += ens.nu * t.value[node]
    return out


def fit(X: np.ndarray, y: np.ndarray, cfg: GBMConfig = GBMConfig(),
        scaler: Scaler | None = None) -> TreeEnsemble:
    """Boosted fit of y (kW) on X. X is expected standardized when it comes
    from the feature pipeline; any numeric matrix works."""
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-d")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 training rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("X and y must be finite")

    n, n_feat = X.shape
    XT = np.ascontiguousarray(X.T)
    presort = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int32))

    f0 = float(y.mean())
    pred = np.full(n, f0)
    ens = TreeEnsemble(f0=f0, nu=cfg.learning_rate, trees=[], config=cfg,
                       n_features=n_feat, scaler=scaler,
                       split_gain=np.zeros(n_feat))
    for _m in range(cfg.m_trees):
        r = y - pred
        feat, thr, left, value, gain, leaf_of_row = _grow_tree(
            XT, r, presort, cfg.max_depth, cfg.min_split
        )
        ens.trees.append(Tree(feature=feat, threshold=thr, left=left, value=value))
        internal = feat >= 0
        np.add.at(ens.split_gain, feat[internal], gain[internal])
        pred = pred + cfg.learning_rate * value[leaf_of_row]
        ens.train_mse.append(float(np.mean((y - pred) ** 2)))
    return ens


def feature_importance(ens: TreeEnsemble) -> tuple[np.ndarray, dict[str, float] | None]:
    """Per-feature total SSE reduction, normalized to sum 1, plus the
    category rollup when the ensemble uses the standard 26-feature order."""
    if ens.split_gain is None:
        raise ValueError("ensemble carries no split gains (loaded from an old file?)")
    total = float(ens.split_gain.sum())
    if total <= 0.0:
        imp = np.zeros_like(ens.split_gain)
    else:
        imp = ens.split_gain / total
    rollup = None
    if ens.n_features == len(FEATURE_NAMES):
        name_to_idx = {nm: i for i, nm in enumerate(FEATURE_NAMES)}
        rollup = {
            cat: float(sum(imp[name_to_idx[nm]] for nm in names))
            for cat, names in FEATURE_CATEGORIES.items()
        }
    return imp, rollup


def r2_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Coefficient of determination; 1 for perfect, 0 for the mean predictor."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -np.inf
    return 1.0 - ss_res / ss_tot


_CV_PARAM_ORDER = ("m_trees", "max_depth", "learning_rate", "min_split")


def cross_validate(X: np.ndarray, y: np.ndarray, grid: dict[str, list],
                   k: int = 5, base_cfg: GBMConfig = GBMConfig(),
                   seed: int = 0) -> tuple[GBMConfig, list[dict]]:
    """One-at-a-time sweep around the defaults with k-fold validation R**2
    per setting (the sweep shape mirrors how the hyperparameters were
    originally reported: one row per value, other knobs at defaults).

    Returns the winning config and a table of {param, value, mean_r2}.
    Ties prefer fewer trees, then shallower trees.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not grid:
        raise ValueError("empty parameter grid")
    if X.shape[0] < k:
        raise ValueError(f"need at least k={k} rows, got {X.shape[0]}")
    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(X.shape[0]), k)
    table = []
    for param in (p for p in _CV_PARAM_ORDER if p in grid):
        for val in grid[param]:
            cfg = replace(base_cfg, **{param: val})
            scores = []
            for f_idx in folds:
                mask = np.ones(X.shape[0], dtype=bool)
                mask[f_idx] = False
                ens = fit(X[mask], y[mask], cfg)
                scores.append(r2_score(y[f_idx], predict_batch(ens, X[f_idx])))
            table.append({"param": param, "value": val, "mean_r2": float(np.mean(scores))})
    def sort_key(row):
        cfg = replace(base_cfg, **{row["param"]: row["value"]})
        return (-row["mean_r2"], cfg.m_trees, cfg.max_depth)
    best = min(table, key=sort_key)
    return replace(base_cfg, **{best["param"]: best["value"]}), table


def save_model(ens: TreeEnsemble, path: str | Path) -> None:
    """JSON model file; loading gives prediction-identical results."""
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "feature_order_version": FEATURE_ORDER_VERSION if ens.n_features == len(FEATURE_NAMES) else None,
        "n_features": ens.n_features,
        "f0": ens.f0,
        "nu": ens.nu,
        "config": {
            "m_trees": ens.config.m_trees,
            "max_depth": ens.config.max_depth,
            "learning_rate": ens.config.learning_rate,
            "min_split": ens.config.min_split,
            "seed": ens.config.seed,
        },
        "scaler": ens.scaler.to_dict() if ens.scaler is not None else None,
        "train_mse": ens.train_mse,
        "split_gain": ens.split_gain.tolist() if ens.split_gain is not None else None,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": np.where(t.left >= 0, t.left + 1, -1).tolist(),
                "value": t.value.tolist(),
            }
            for t in ens.trees
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def load_model(path: str | Path) -> TreeEnsemble:
    payload = json.loads(Path(path).read_text())
    if payload["format_version"] != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {payload['format_version']}")
    fov = payload.get("feature_order_version")
    if fov is not None and fov != FEATURE_ORDER_VERSION:
        raise ValueError(
            f"model built under feature order {fov!r}; this build uses {FEATURE_ORDER_VERSION!r}"
        )
    cfg = GBMConfig(**payload["config"])
    trees = []
    for td in payload["trees"]:
        left = np.asarray(td["left"], np.int32)
        right = np.asarray(td["right"], np.int32)
        if np.any(right[left >= 0] != left[left >= 0] + 1):
            raise ValueError("malformed tree: children must be adjacent")
        trees.append(Tree(
            feature=np.asarray(td["feature"], np.int32),
            threshold=np.asarray(td["threshold"], np.float64),
            left=left,
            value=np.asarray(td["value"], np.float64),
        ))
    scaler = Scaler.from_dict(payload["scaler"]) if payload["scaler"] is not None else None
    split_gain = (np.asarray(payload["split_gain"], dtype=float)
                  if payload["split_gain"] is not None else None)
    return TreeEnsemble(
        f0=payload["f0"], nu=payload["nu"], trees=trees, config=cfg,
        n_features=payload["n_features"], scaler=scaler,
        train_mse=list(payload["train_mse"]), split_gain=split_gain,
    )
