from .buffer import ReplayBuffer, Transition
from .maddpg import (MADDPG, Hyperparams, decode_action, delayed_policy_gate, global_reward,
                     local_reward, squash)
from .nn import Adam, DenseNetwork, soft_update

__all__ = [
    "Adam", "DenseNetwork", "Hyperparams", "MADDPG", "ReplayBuffer", "Transition",
    "decode_action", "delayed_policy_gate", "global_reward", "local_reward", "soft_update", "squash",
]
