"""FIFO experience-replay buffer over fixed-size numpy rings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STATE_DIM = 9


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Ring buffer: once full, each insert evicts the oldest transition."""

    def __init__(self, capacity: int, state_dim: int = STATE_DIM):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.state_dim = state_dim
        self._states = np.zeros((capacity, state_dim))
        self._actions = np.zeros(capacity, np.int64)
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, state_dim))
        self._dones = np.zeros(capacity, bool)
        self._size = 0
        self._head = 0

    def __len__(self) -> int:
        return self._size

    def add(self, t: Transition) -> None:
        i = self._head
        self._states[i] = t.state
        self._actions[i] = t.action
        self._rewards[i] = t.reward
        self._next_states[i] = t.next_state
        self._dones[i] = t.done
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        if batch_size > self._size:
            raise ValueError(f"cannot sample {batch_size} from buffer of size {self._size}")
        idx = rng.integers(self._size, size=batch_size)
        return (self._states[idx], self._actions[idx], self._rewards[idx],
                self._next_states[idx], self._dones[idx])

    def contents(self):
        """All stored transitions in insertion order (oldest first)."""
        if self._size < self.capacity:
            order = np.arange(self._size)
        else:
            order = np.concatenate([np.arange(self._head, self.capacity),
                                    np.arange(self._head)])
        return (self._states[order], self._actions[order], self._rewards[order],
                self._next_states[order], self._dones[order])

    def save_npz(self, path) -> None:
        s, a, r, s2, d = self.contents()
        np.savez(path, states=s, actions=a, rewards=r, next_states=s2, dones=d,
                 capacity=self.capacity)

    @classmethod
    def load_npz(cls, path) -> "ReplayBuffer":
        with np.load(path) as z:
            buf = cls(int(z["capacity"]), state_dim=z["states"].shape[1])
            for i in range(z["states"].shape[0]):
                buf.add(Transition(z["states"][i], int(z["actions"][i]),
                                   float(z["rewards"][i]), z["next_states"][i],
                                   bool(z["dones"][i])))
        return buf
