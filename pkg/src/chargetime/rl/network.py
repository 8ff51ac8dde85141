"""Q-network: a fully connected 9 -> 256 -> 128 -> 64 -> 50 net in plain
numpy, with layer normalization on the first two hidden layers, ReLU
activations, and inverted dropout after each hidden activation during
training. Hand-rolled so gradients are explicit (the TD-loss gradient is
verified against finite differences in the test suite) and so weights
serialize to a flat, versioned byte layout.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

LN_EPS = 1e-5


class QNetwork:
    def __init__(self, state_dim: int = 9, n_actions: int = 50,
                 hidden=(256, 128, 64), dropout: float = 0.2,
                 seed: int = 0, dtype=np.float64):
        if len(hidden) != 3:
            raise ValueError("architecture is three hidden layers")
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.hidden = tuple(int(h) for h in hidden)
        self.dropout = float(dropout)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        h1, h2, h3 = self.hidden
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, (fan_in, fan_out) in (
            ("W1", (state_dim, h1)), ("W2", (h1, h2)),
            ("W3", (h2, h3)), ("W4", (h3, n_actions)),
        ):
            # He initialization for ReLU layers
            self.params[name] = (rng.standard_normal((fan_in, fan_out))
                                 * np.sqrt(2.0 / fan_in)).astype(self.dtype)
            self.params[name.replace("W", "b")] = np.zeros(fan_out, self.dtype)
        for i, h in (("1", h1), ("2", h2)):
            self.params[f"g{i}"] = np.ones(h, self.dtype)   # layer-norm scale
            self.params[f"c{i}"] = np.zeros(h, self.dtype)  # layer-norm shift

    # ---- forward / backward -------------------------------------------
    def forward(self, x: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None):
        """Q-values for a batch of normalized states; returns (q, cache).

        Evaluation mode (training=False) is deterministic: dropout off,
        layer norm in its ordinary per-sample form.
        """
        x = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite network input")
        if x.shape[1] != self.state_dim:
            raise ValueError(f"expected state dim {self.state_dim}, got {x.shape[1]}")
        if training and self.dropout > 0.0 and rng is None:
            raise ValueError("training-mode forward with dropout needs an rng")
        p = self.params
        cache = {"x": x, "training": training}

        z1 = x @ p["W1"] + p["b1"]
        n1, cache["ln1"] = _layer_norm(z1, p["g1"], p["c1"])
        h1 = np.maximum(n1, 0.0)
        d1, cache["m1"] = _dropout(h1, self.dropout, training, rng)

        z2 = d1 @ p["W2"] + p["b2"]
        n2, cache["ln2"] = _layer_norm(z2, p["g2"], p["c2"])
        h2 = np.maximum(n2, 0.0)
        d2, cache["m2"] = _dropout(h2, self.dropout, training, rng)

        z3 = d2 @ p["W3"] + p["b3"]
        h3 = np.maximum(z3, 0.0)
        d3, cache["m3"] = _dropout(h3, self.dropout, training, rng)

        q = d3 @ p["W4"] + p["b4"]
        cache.update(n1=n1, n2=n2, z3=z3, d1=d1, d2=d2, d3=d3)
        return q, cache

    def backward(self, cache: dict, dq: np.ndarray) -> "OrderedDict[str, np.ndarray]":
        """Gradients of a scalar loss with upstream dL/dq."""
        p = self.params
        g = OrderedDict()
        dq = np.asarray(dq, dtype=self.dtype)

        g["W4"] = cache["d3"].T @ dq
        g["b4"] = dq.sum(axis=0)
        dd3 = dq @ p["W4"].T
        dh3 = _dropout_back(dd3, cache["m3"], self.dropout)
        dz3 = dh3 * (cache["z3"] > 0)

        g["W3"] = cache["d2"].T @ dz3
        g["b3"] = dz3.sum(axis=0)
        dd2 = dz3 @ p["W3"].T
        dh2 = _dropout_back(dd2, cache["m2"], self.dropout)
        dn2 = dh2 * (cache["n2"] > 0)
        dz2, g["g2"], g["c2"] = _layer_norm_back(dn2, cache["ln2"])

        g["W2"] = cache["d1"].T @ dz2
        g["b2"] = dz2.sum(axis=0)
        dd1 = dz2 @ p["W2"].T
        dh1 = _dropout_back(dd1, cache["m1"], self.dropout)
        dn1 = dh1 * (cache["n1"] > 0)
        dz1, g["g1"], g["c1"] = _layer_norm_back(dn1, cache["ln1"])

        g["W1"] = cache["x"].T @ dz1
        g["b1"] = dz1.sum(axis=0)
        return g

    # ---- weight plumbing ----------------------------------------------
    def copy(self) -> "QNetwork":
        twin = QNetwork(self.state_dim, self.n_actions, self.hidden,
                        self.dropout, seed=0, dtype=self.dtype)
        twin.load_state(self.params)
        return twin

    def load_state(self, params) -> None:
        for k in self.params:
            if self.params[k].shape != params[k].shape:
                raise ValueError(f"shape mismatch for {k}")
            self.params[k] = params[k].astype(self.dtype).copy()

    def flat_weights(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.params])

    def load_flat_weights(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=self.dtype)
        i = 0
        for k, v in self.params.items():
            self.params[k] = flat[i:i + v.size].reshape(v.shape).copy()
            i += v.size
        if i != flat.size:
            raise ValueError(f"weight blob has {flat.size} values, expected {i}")


def _layer_norm(z, gamma, beta):
    mu = z.mean(axis=1, keepdims=True)
    var = z.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    zhat = (z - mu) * inv
    return zhat * gamma + beta, (zhat, inv, gamma)


def _layer_norm_back(dout, ln_cache):
    zhat, inv, gamma = ln_cache
    n = zhat.shape[1]
    dgamma = (dout * zhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dzhat = dout * gamma
    dz = inv * (dzhat - dzhat.mean(axis=1, keepdims=True)
                - zhat * (dzhat * zhat).mean(axis=1, keepdims=True))
    return dz, dgamma, dbeta


def _dropout(h, p, training, rng):
    if not training or p <= 0.0:
        return h, None
    mask = rng.uniform(size=h.shape) >= p
    return h * mask / (1.0 - p), mask


def _dropout_back(dh, mask, p):
    if mask is None:
        return dh
    return dh * mask / (1.0 - p)


class Adam:
    """Adaptive moment estimation with the conventional defaults."""

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, gr in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gr
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gr * gr
            params[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)
