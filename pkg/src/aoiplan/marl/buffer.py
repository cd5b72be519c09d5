from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    """One joint step: every agent's state, action and local reward."""

    states: np.ndarray        # (V, state_dim)
    actions: np.ndarray       # (V, action_dim)
    local_rewards: np.ndarray  # (V,)
    global_reward: float
    next_states: np.ndarray   # (V, state_dim)
    done: bool = False

    def __post_init__(self):
        v = len(self.states)
        if not (len(self.actions) == len(self.local_rewards) == len(self.next_states) == v):
            raise ValueError("transition components disagree on the number of agents")


class ReplayBuffer:
    """FIFO ring of joint transitions with uniform sampling."""

    def __init__(self, capacity, num_agents, state_dim, action_dim, dtype=np.float32):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.states = np.zeros((self.capacity, num_agents, state_dim), dtype=dtype)
        self.next_states = np.zeros_like(self.states)
        self.actions = np.zeros((self.capacity, num_agents, action_dim), dtype=dtype)
        self.local_rewards = np.zeros((self.capacity, num_agents), dtype=dtype)
        self.global_rewards = np.zeros(self.capacity, dtype=dtype)
        self.dones = np.zeros(self.capacity, dtype=dtype)
        # insertion counter of each slot, lets tests check FIFO eviction
        self.stamps = np.full(self.capacity, -1, dtype=np.int64)
        self.ptr = 0
        self.size = 0
        self.inserted = 0

    def __len__(self):
        return self.size

    def add(self, tr: Transition):
        i = self.ptr
        self.states[i] = tr.states
        self.actions[i] = tr.actions
        self.local_rewards[i] = tr.local_rewards
        self.global_rewards[i] = tr.global_reward
        self.next_states[i] = tr.next_states
        self.dones[i] = float(tr.done)
        self.stamps[i] = self.inserted
        self.inserted += 1
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rng):
        if self.size < batch_size:
            raise ValueError(f"need {batch_size} stored transitions, have {self.size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return {
            "idx": idx,
            "states": self.states[idx],
            "actions": self.actions[idx],
            "local_rewards": self.local_rewards[idx],
            "global_rewards": self.global_rewards[idx],
            "next_states": self.next_states[idx],
            "dones": self.dones[idx],
        }
