"""Deep Q-learning components: MDP environment over charging sessions,
replay buffer, Q-network, TD training loop, and greedy-policy inference."""

from .buffer import ReplayBuffer, Transition
from .env import (
    ACTION_COUNT,
    ChargingEnv,
    RewardConfig,
    action_power,
    normalize_states,
    reward,
)
from .network import Adam, QNetwork
from .training import (
    DQNConfig,
    TrainingHistory,
    load_agent,
    save_agent,
    select_action,
    sync_target,
    td_update,
    train_agent,
)
from .inference import greedy_power_model, greedy_power_profiles

__all__ = [
    "ACTION_COUNT", "Adam", "ChargingEnv", "DQNConfig", "QNetwork",
    "ReplayBuffer", "RewardConfig", "Transition", "TrainingHistory",
    "action_power", "greedy_power_model", "greedy_power_profiles",
    "load_agent", "normalize_states", "reward", "save_agent",
    "select_action", "sync_target", "td_update", "train_agent",
]
