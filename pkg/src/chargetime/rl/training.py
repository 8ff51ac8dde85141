"""DQN training: epsilon-greedy episodes over simulated sessions, TD
updates against a periodically synchronized target network, and a replay
buffer seeded from the analytical model's rollouts.

Because the environment's state transitions are action-independent (the
agent predicts, the battery charges regardless), each episode's state
trajectory is known upfront; action selection therefore runs as one
batched forward per episode, and only the gradient updates loop.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..physics import effective_max_power, pack_voltage, taper_factor, temperature_efficiency
from ..simulator import SessionRecord
from .buffer import ReplayBuffer, Transition
from .env import ACTION_COUNT, RewardConfig, STATE_SCALE, nearest_action, normalize_states
from .network import Adam, QNetwork

AGENT_MAGIC = b"CTAG"
AGENT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class DQNConfig:
    hidden: tuple[int, int, int] = (256, 128, 64)
    n_actions: int = ACTION_COUNT
    learning_rate: float = 1e-4
    gamma: float = 0.99
    buffer_capacity: int = 50_000
    batch_size: int = 128
    init_buffer: int = 1000
    dropout: float = 0.2
    target_sync_steps: int = 500
    update_every: int = 1
    n_episode_steps: int = 100
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("need buffer_capacity >= batch_size >= 1")


@dataclass
class TrainingHistory:
    episode: list[int] = field(default_factory=list)
    reward: list[float] = field(default_factory=list)
    mean_q: list[float] = field(default_factory=list)
    epsilon: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)

    def append(self, episode, reward, mean_q, epsilon, loss):
        self.episode.append(episode)
        self.reward.append(reward)
        self.mean_q.append(mean_q)
        self.epsilon.append(epsilon)
        self.loss.append(loss)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("episode", "reward", "mean_q", "epsilon", "loss"))
            for row in zip(self.episode, self.reward, self.mean_q, self.epsilon, self.loss):
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])

    @classmethod
    def from_csv(cls, path) -> "TrainingHistory":
        h = cls()
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            next(r)
            for row in r:
                h.append(int(row[0]), float(row[1]), float(row[2]), float(row[3]), float(row[4]))
        return h


def default_epsilon_schedule(episode: int) -> float:
    """Mirrors the orchestrator's sample-count schedule with training
    starting at the transition threshold: linear 0.3 -> 0.1 over the
    first 1000 episodes, then the dominance value 0.05."""
    if episode < 1000:
        return 0.3 - 0.2 * episode / 1000.0
    return 0.05


def select_action(net: QNetwork, state: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy over a single physical state; greedy ties resolve to
    the lowest action index."""
    if not (0.0 <= epsilon <= 1.0):
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if epsilon > 0.0 and rng.uniform() < epsilon:
        return int(rng.integers(net.n_actions))
    q, _ = net.forward(normalize_states(np.asarray(state)[None, :]), training=False)
    return int(np.argmax(q[0]))


def sync_target(net: QNetwork, target_net: QNetwork) -> None:
    """theta_minus := theta, bitwise."""
    target_net.load_state(net.params)


def td_update(net: QNetwork, target_net: QNetwork, batch, cfg: DQNConfig,
              optimizer: Adam, rng: np.random.Generator) -> float:
    """One gradient step on the mean squared TD error; returns the
    pre-step loss. Terminal transitions bootstrap to the bare reward."""
    states, actions, rewards, next_states, dones = batch
    if len(states) == 0:
        raise ValueError("empty batch")
    q_next, _ = target_net.forward(normalize_states(next_states), training=False)
    target = rewards + cfg.gamma * (1.0 - dones.astype(float)) * q_next.max(axis=1)
    q, cache = net.forward(normalize_states(states), training=True, rng=rng)
    rows = np.arange(len(states))
    q_a = q[rows, actions]
    err = q_a - target
    loss = float(np.mean(err ** 2))
    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * err / len(states)
    grads = net.backward(cache, dq)
    optimizer.step(net.params, grads)
    return loss


def _episode_arrays(rec: SessionRecord, n_steps: int, reward_cfg: RewardConfig):
    """Precompute one episode's state trajectory and actual powers.

    Returns (states (N+1, 9) physical, p_actual (N,), grid (N,), ds).
    """
    tr = rec.trace
    sc = tr.scenario
    ds = (sc.s_final - sc.s_ini) / n_steps
    grid = sc.s_ini + np.arange(n_steps) * ds
    p_act = np.interp(grid, tr.soc_grid, tr.power_kw)
    c_eff = sc.vehicle.c_bat_nom * sc.soh
    t_elapsed = np.concatenate([[0.0], np.cumsum(60.0 * c_eff * ds / p_act)])
    e_delivered = np.concatenate([[0.0], np.cumsum(np.full(n_steps, c_eff * ds))])
    s_pts = np.concatenate([grid, [sc.s_final]])
    v_pts = pack_voltage(s_pts, sc.vehicle)
    current = np.concatenate([[0.0], p_act / v_pts[:-1]])
    states = np.empty((n_steps + 1, 9))
    states[:, 0] = s_pts
    states[:, 1] = sc.soh
    states[:, 2] = sc.t_amb
    states[:, 3] = sc.p_station
    states[:, 4] = sc.vehicle.c_bat_nom
    states[:, 5] = v_pts
    states[:, 6] = current
    states[:, 7] = t_elapsed
    states[:, 8] = e_delivered
    return states, p_act, grid, ds


def _episode_rewards(p_pred: np.ndarray, p_act: np.ndarray, grid: np.ndarray,
                     rec: SessionRecord, reward_cfg: RewardConfig) -> np.ndarray:
    sc = rec.trace.scenario
    p_eff = effective_max_power(sc.vehicle.p_max_nom, sc.soh)
    r = -np.abs(p_pred - p_act)
    r -= reward_cfg.lambda_soh * np.maximum(0.0, p_pred - p_eff)
    cv = grid > reward_cfg.s_cv
    if cv.any():
        eta = temperature_efficiency(sc.t_amb, rec.params)
        p_target = p_eff * eta * taper_factor(grid[cv], rec.params)
        r[cv] -= reward_cfg.lambda_cv * np.abs(p_pred[cv] - p_target)
    return r


def seed_buffer(buffer: ReplayBuffer, records: list[SessionRecord], cfg: DQNConfig,
                reward_cfg: RewardConfig, analytical_model=None,
                rng: np.random.Generator | None = None) -> int:
    """Fill the buffer with exactly cfg.init_buffer transitions.

    With an analytical model the teacher actions are the nearest levels to
    its clamped power predictions; without one (the random-initialization
    study arm) actions are uniform random.
    """
    n_steps = cfg.n_episode_steps
    needed_sessions = -(-cfg.init_buffer // n_steps)
    if len(records) < needed_sessions:
        raise ValueError(
            f"buffer seeding needs {needed_sessions} sessions, got {len(records)}"
        )
    added = 0
    for rec in records[:needed_sessions]:
        sc = rec.trace.scenario
        states, p_act, grid, ds = _episode_arrays(rec, n_steps, reward_cfg)
        if analytical_model is not None:
            p_eff = effective_max_power(sc.vehicle.p_max_nom, sc.soh)
            p_model = np.minimum(np.minimum(analytical_model(sc)(grid), sc.p_station), p_eff)
            acts = np.array([nearest_action(p, sc.vehicle.p_max_nom) for p in p_model])
        else:
            acts = rng.integers(ACTION_COUNT, size=n_steps)
        p_pred = acts * (sc.vehicle.p_max_nom / (ACTION_COUNT - 1))
        rewards = _episode_rewards(p_pred, p_act, grid, rec, reward_cfg)
        for k in range(n_steps):
            if added >= cfg.init_buffer:
                break
            buffer.add(Transition(states[k], int(acts[k]), float(rewards[k]),
                                  states[k + 1], k == n_steps - 1))
            added += 1
    return added


def train_agent(records: list[SessionRecord], analytical_model, cfg: DQNConfig,
                episodes: int, epsilon_schedule=None,
                reward_cfg: RewardConfig = RewardConfig(),
                seeding: str = "analytical", callback=None):
    """Train a DQN over simulated sessions.

    ``analytical_model(scenario) -> callable(s_grid) -> kW`` seeds the
    replay buffer (Stage-1 physics-consistent transitions). ``callback``,
    if given, runs as callback(episode_index, net) after each episode and
    may return True to stop early. Returns (net, history).
    """
    if epsilon_schedule is None:
        epsilon_schedule = default_epsilon_schedule
    if seeding not in ("analytical", "random"):
        raise ValueError(f"unknown seeding mode {seeding!r}")
    dtype = np.dtype(cfg.dtype)
    net = QNetwork(hidden=cfg.hidden, n_actions=cfg.n_actions,
                   dropout=cfg.dropout, seed=cfg.seed, dtype=dtype)
    target = net.copy()
    optimizer = Adam(net.params, lr=cfg.learning_rate)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    rng_seed = np.random.default_rng([cfg.seed, 0])
    rng_actions = np.random.default_rng([cfg.seed, 1])
    rng_batch = np.random.default_rng([cfg.seed, 2])
    rng_dropout = np.random.default_rng([cfg.seed, 3])
    rng_order = np.random.default_rng([cfg.seed, 4])

    seed_buffer(buffer, records, cfg, reward_cfg,
                analytical_model if seeding == "analytical" else None, rng_seed)

    history = TrainingHistory()
    step_counter = 0
    n_steps = cfg.n_episode_steps
    order = rng_order.permutation(len(records))
    pos = 0
    for ep in range(episodes):
        if pos >= len(order):
            order = rng_order.permutation(len(records))
            pos = 0
        rec = records[order[pos]]
        pos += 1
        sc = rec.trace.scenario
        eps = float(epsilon_schedule(ep))
        states, p_act, grid, ds = _episode_arrays(rec, n_steps, reward_cfg)
        q, _ = net.forward(normalize_states(states[:-1]), training=False)
        acts = np.argmax(q, axis=1)
        explore = rng_actions.uniform(size=n_steps) < eps
        if explore.any():
            acts = np.where(explore, rng_actions.integers(ACTION_COUNT, size=n_steps), acts)
        p_pred = acts * (sc.vehicle.p_max_nom / (ACTION_COUNT - 1))
        rewards = _episode_rewards(p_pred, p_act, grid, rec, reward_cfg)
        losses = []
        for k in range(n_steps):
            buffer.add(Transition(states[k], int(acts[k]), float(rewards[k]),
                                  states[k + 1], k == n_steps - 1))
            step_counter += 1
            if step_counter % cfg.update_every == 0 and len(buffer) >= cfg.batch_size:
                batch = buffer.sample(cfg.batch_size, rng_batch)
                losses.append(td_update(net, target, batch, cfg, optimizer, rng_dropout))
            if step_counter % cfg.target_sync_steps == 0:
                sync_target(net, target)
        history.append(ep, float(rewards.sum()), float(q.max(axis=1).mean()), eps,
                       float(np.mean(losses)) if losses else float("nan"))
        if callback is not None and callback(ep, net):
            break
    return net, history


def save_agent(path, net: QNetwork, cfg: DQNConfig) -> None:
    """Single-file hybrid format: magic, 4-byte header length, JSON header
    (config, normalization, architecture), then the flat weight array."""
    header = {
        "format_version": AGENT_FORMAT_VERSION,
        "state_dim": net.state_dim,
        "n_actions": net.n_actions,
        "hidden": list(net.hidden),
        "dropout": net.dropout,
        "dtype": str(net.dtype),
        "state_scale": STATE_SCALE.tolist(),
        "config": {
            "hidden": list(cfg.hidden), "n_actions": cfg.n_actions,
            "learning_rate": cfg.learning_rate, "gamma": cfg.gamma,
            "buffer_capacity": cfg.buffer_capacity, "batch_size": cfg.batch_size,
            "init_buffer": cfg.init_buffer, "dropout": cfg.dropout,
            "target_sync_steps": cfg.target_sync_steps, "update_every": cfg.update_every,
            "n_episode_steps": cfg.n_episode_steps, "seed": cfg.seed, "dtype": cfg.dtype,
        },
    }
    blob = json.dumps(header, sort_keys=True).encode()
    weights = net.flat_weights().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(AGENT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(weights)


def load_agent(path) -> tuple[QNetwork, DQNConfig]:
    raw = Path(path).read_bytes()
    if raw[:4] != AGENT_MAGIC:
        raise ValueError("not an agent file")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + hlen].decode())
    if header["format_version"] != AGENT_FORMAT_VERSION:
        raise ValueError(f"unsupported agent format_version {header['format_version']}")
    if header["state_scale"] != STATE_SCALE.tolist():
        raise ValueError("agent was trained under different state normalization")
    cfg = DQNConfig(**{**header["config"], "hidden": tuple(header["config"]["hidden"])})
    net = QNetwork(state_dim=header["state_dim"], n_actions=header["n_actions"],
                   hidden=tuple(header["hidden"]), dropout=header["dropout"],
                   seed=0, dtype=np.dtype(header["dtype"]))
    flat = np.frombuffer(raw[8 + hlen:], dtype="<f8")
    net.load_flat_weights(flat)
    return net, cfg
