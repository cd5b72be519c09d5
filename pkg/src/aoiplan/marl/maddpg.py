"""Multi-agent actor-critic learner with per-agent local critics and twin global critics.

Every agent owns an actor and a local critic that only see its own state
and action.  Two global critics score the joint state-action; the smaller
of their target estimates forms the bootstrap target.  Global critics are
trained every episode, local critics and actors on a slower period.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import DenseNetwork, make_optimizer, soft_update


@dataclass
class Hyperparams:
    gamma: float = 0.99
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    tau: float = 0.0005
    policy_delay: int = 2
    batch_size: int = 64
    buffer_capacity: int = 100_000
    actor_hidden: tuple = (1024, 512)
    critic_hidden: tuple = (1024, 512, 256)
    noise_init: float = 0.3
    noise_decay: float = 0.995
    noise_floor: float = 0.01
    optimizer: str = "adam"
    updates_per_episode: int = 1
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("buffer_capacity must be >= batch_size >= 1")
        if self.updates_per_episode < 0:
            raise ValueError("updates_per_episode must be >= 0")
        self.actor_hidden = tuple(int(h) for h in self.actor_hidden)
        self.critic_hidden = tuple(int(h) for h in self.critic_hidden)

    def as_dict(self):
        d = asdict(self)
        d["actor_hidden"] = list(self.actor_hidden)
        d["critic_hidden"] = list(self.critic_hidden)
        return d


# -- rewards --------------------------------------------------------------

def step_indicator(x):
    """Unit step used for the rate bonus: 1 where x >= 0, else 0."""
    return (np.asarray(x) >= 0).astype(float)


def local_reward(aoi_ms, rate_bps, rate_floor_bps, num_agents, aoi_max_ms=100.0):
    """Per-agent reward: normalized age penalty plus a bonus for meeting the rate floor."""
    aoi_ms = np.asarray(aoi_ms, dtype=float)
    out = -aoi_ms / (num_agents * aoi_max_ms) + 0.05 * step_indicator(np.asarray(rate_bps) - rate_floor_bps)
    return float(out) if out.ndim == 0 else out


def global_reward(local_rewards):
    local_rewards = np.asarray(local_rewards, dtype=float)
    if local_rewards.size == 0:
        raise ValueError("global reward of an empty team is undefined")
    return float(np.mean(local_rewards))


def delayed_policy_gate(episode_index, period):
    if period < 1:
        raise ValueError("period must be >= 1")
    return episode_index % period == 0


def exploration_scale(episode, hp: Hyperparams):
    return max(hp.noise_floor, hp.noise_init * hp.noise_decay ** episode)


# -- actions --------------------------------------------------------------

# Pre-squash noise is measured against this span of the squashing input.
PRE_SQUASH_SPAN = 6.0


def squash(pre, num_subchannels):
    """Map raw actor outputs to the action vector [tanh(logits)..., sigmoid(power)]."""
    out = np.empty_like(pre)
    out[..., :num_subchannels] = np.tanh(pre[..., :num_subchannels])
    out[..., num_subchannels:] = 0.5 * (1.0 + np.tanh(0.5 * pre[..., num_subchannels:]))
    return out


def squash_grad(action, num_subchannels):
    d = np.empty_like(action)
    d[..., :num_subchannels] = 1.0 - action[..., :num_subchannels] ** 2
    p = action[..., num_subchannels:]
    d[..., num_subchannels:] = p * (1.0 - p)
    return d


def decode_action(action, num_subchannels, max_power_mw):
    """Action vector(s) -> (subchannel index, transmit power in mW).

    The subchannel is the argmax of the logits, so exactly one is chosen;
    power is the squashed head scaled to [0, p_max].
    """
    action = np.asarray(action)
    sub = np.argmax(action[..., :num_subchannels], axis=-1)
    power = np.clip(action[..., num_subchannels], 0.0, 1.0) * max_power_mw
    return sub, power


# -- learner --------------------------------------------------------------

def _mse_and_grad(q, y):
    diff = q - y
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def _grad_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)))


class MADDPG:
    """Learner for ``num_agents`` agents with identical state/action layouts."""

    def __init__(self, num_agents, state_dim, num_subchannels, hp: Hyperparams | None = None,
                 seed=0):
        self.hp = hp or Hyperparams()
        self.V = int(num_agents)
        self.state_dim = int(state_dim)
        self.N = int(num_subchannels)
        self.action_dim = self.N + 1
        self.rng = np.random.default_rng(seed)
        dtype = np.dtype(self.hp.dtype)
        hp = self.hp
        V, ds, da = self.V, self.state_dim, self.action_dim

        self.actors = DenseNetwork([ds, *hp.actor_hidden, da], stack=(V,), rng=self.rng, dtype=dtype)
        self.local_critics = DenseNetwork([ds + da, *hp.critic_hidden, 1], stack=(V,), rng=self.rng,
                                          dtype=dtype)
        joint = V * (ds + da)
        self.global_critics = [DenseNetwork([joint, *hp.critic_hidden, 1], rng=self.rng, dtype=dtype)
                               for _ in range(2)]
        self.actors_target = self.actors.copy()
        self.local_critics_target = self.local_critics.copy()
        self.global_critics_target = [c.copy() for c in self.global_critics]

        self.actor_opt = make_optimizer(hp.optimizer, self.actors.params(), hp.actor_lr)
        self.local_opt = make_optimizer(hp.optimizer, self.local_critics.params(), hp.critic_lr)
        self.global_opts = [make_optimizer(hp.optimizer, c.params(), hp.critic_lr)
                            for c in self.global_critics]
        self.counters = {"episodes": 0, "global_updates": 0, "policy_updates": 0}

    # -- acting -----------------------------------------------------------

    def act(self, states, noise_scale=0.0, rng=None):
        """Joint action vectors, shape (V, N + 1), for joint states (V, state_dim)."""
        states = np.asarray(states, dtype=self.actors.dtype)
        pre = self.actors.forward(states[:, None, :], record=False)[:, 0, :]
        if noise_scale > 0:
            rng = rng if rng is not None else self.rng
            std = noise_scale * PRE_SQUASH_SPAN
            pre = pre + np.clip(rng.normal(0.0, std, pre.shape), -2.0 * std, 2.0 * std).astype(pre.dtype)
        return squash(pre, self.N)

    def target_actions(self, states):
        """Target-policy actions for a batch of joint states (B, V, ds) -> (B, V, da)."""
        x = np.swapaxes(states, 0, 1)
        pre = self.actors_target.forward(x, record=False)
        return np.swapaxes(squash(pre, self.N), 0, 1)

    @staticmethod
    def joint_input(states, actions):
        """Flatten (B, V, ds) and (B, V, da) into global-critic rows (B, V*(ds+da))."""
        B = states.shape[0]
        return np.concatenate([states.reshape(B, -1), actions.reshape(B, -1)], axis=-1)

    # -- targets ----------------------------------------------------------

    def twin_global_target(self, batch):
        hp = self.hp
        next_actions = self.target_actions(batch["next_states"])
        x = self.joint_input(batch["next_states"], next_actions)
        q1 = self.global_critics_target[0].forward(x, record=False)[:, 0]
        q2 = self.global_critics_target[1].forward(x, record=False)[:, 0]
        not_done = 1.0 - batch["dones"]
        return batch["global_rewards"] + hp.gamma * not_done * np.minimum(q1, q2)

    def local_target(self, batch):
        """y^v = r^v + gamma (1 - d) Q'_v(s'^v, pi'_v(s'^v)), shape (V, B)."""
        hp = self.hp
        s2 = np.swapaxes(batch["next_states"], 0, 1)                   # (V, B, ds)
        a2 = squash(self.actors_target.forward(s2, record=False), self.N)
        q = self.local_critics_target.forward(np.concatenate([s2, a2], -1), record=False)[..., 0]
        not_done = 1.0 - batch["dones"]
        return batch["local_rewards"].T + hp.gamma * not_done[None, :] * q

    # -- updates ----------------------------------------------------------

    def update_global_critics(self, batch):
        y = self.twin_global_target(batch)
        x = self.joint_input(batch["states"], batch["actions"])
        losses = []
        for critic, opt in zip(self.global_critics, self.global_opts):
            q = critic.forward(x)[:, 0]
            loss, dq = _mse_and_grad(q, y)
            grads, _ = critic.backward(dq[:, None])
            opt.step(grads)
            losses.append(loss)
        self.counters["global_updates"] += 1
        return losses

    def update_local_critics(self, batch):
        y = self.local_target(batch)                                        # (V, B)
        s = np.swapaxes(batch["states"], 0, 1)
        a = np.swapaxes(batch["actions"], 0, 1)
        q = self.local_critics.forward(np.concatenate([s, a], -1))[..., 0]
        diff = q - y
        losses = np.mean(diff ** 2, axis=1)
        grads, _ = self.local_critics.backward((2.0 * diff / diff.shape[1])[..., None])
        self.local_opt.step(grads)
        return losses

    def actor_gradients(self, batch):
        """Gradient of the actor loss -(Q_G1 + Q_v) for every agent at once.

        For agent v the global critic sees the stored joint action with
        only agent v's entry replaced by its current policy output.
        """
        V, N, ds, da = self.V, self.N, self.state_dim, self.action_dim
        states = batch["states"]
        B = states.shape[0]
        s = np.swapaxes(states, 0, 1)                                     # (V, B, ds)
        pre = self.actors.forward(s)
        act = squash(pre, N)                                              # (V, B, da)

        # global critic Q1 with agent v's action substituted: (V, B, joint)
        joint_actions = np.broadcast_to(batch["actions"][None], (V, B, V, da)).copy()
        idx = np.arange(V)
        joint_actions[idx, :, idx, :] = act
        x = np.concatenate([np.broadcast_to(states.reshape(1, B, -1), (V, B, V * ds)),
                            joint_actions.reshape(V, B, -1)], axis=-1)
        critic = self.global_critics[0]
        q_g = critic.forward(x.reshape(V * B, -1))
        _, gx = critic.backward(np.ones_like(q_g), param_grads=False)
        gx = gx.reshape(V, B, -1)[..., V * ds:].reshape(V, B, V, da)
        grad_a_global = gx[idx, :, idx, :]                                # (V, B, da)

        q_l = self.local_critics.forward(np.concatenate([s, act], -1))
        _, gl = self.local_critics.backward(np.ones_like(q_l), param_grads=False)
        grad_a_local = gl[..., ds:]

        # minimize -(1/B) sum_j [Q_G1 + Q_v]
        grad_act = -(grad_a_global + grad_a_local) / B
        grad_pre = grad_act * squash_grad(act, N)
        grads, _ = self.actors.backward(grad_pre)
        objective = (q_g.reshape(V, B).mean(axis=1) + q_l[..., 0].mean(axis=1))
        return grads, objective

    def update_actors(self, batch):
        grads, _ = self.actor_gradients(batch)
        self.actor_opt.step(grads)
        self.counters["policy_updates"] += 1
        return _grad_norm(grads)

    def soft_update_global(self):
        for main, target in zip(self.global_critics, self.global_critics_target):
            soft_update(main.params(), target.params(), self.hp.tau)

    def soft_update_local(self):
        soft_update(self.actors.params(), self.actors_target.params(), self.hp.tau)
        soft_update(self.local_critics.params(), self.local_critics_target.params(), self.hp.tau)

    def learn(self, buffer, episode_index, rng=None):
        """One episode's worth of learning; returns a dict of diagnostics."""
        rng = rng if rng is not None else self.rng
        hp = self.hp
        info = {"global_loss": None, "local_loss": None, "actor_grad": None}
        if len(buffer) < hp.batch_size:
            return info
        gated = delayed_policy_gate(episode_index, hp.policy_delay)
        for _ in range(hp.updates_per_episode):
            batch = buffer.sample(hp.batch_size, rng)
            info["global_loss"] = self.update_global_critics(batch)
            self.soft_update_global()
            if gated:
                info["local_loss"] = float(np.mean(self.update_local_critics(batch)))
                info["actor_grad"] = self.update_actors(batch)
                self.soft_update_local()
        return info

    # -- persistence --------------------------------------------------------

    def networks(self):
        return {
            "actors": self.actors,
            "actors_target": self.actors_target,
            "local_critics": self.local_critics,
            "local_critics_target": self.local_critics_target,
            "global_critic_1": self.global_critics[0],
            "global_critic_2": self.global_critics[1],
            "global_critic_1_target": self.global_critics_target[0],
            "global_critic_2_target": self.global_critics_target[1],
        }

    def load_arrays(self, name, arrays):
        net = self.networks()[name]
        params = net.params()
        if len(params) != len(arrays):
            raise ValueError(f"{name}: expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if p.shape != a.shape:
                raise ValueError(f"{name}: shape mismatch {p.shape} vs {a.shape}")
            p[...] = a
