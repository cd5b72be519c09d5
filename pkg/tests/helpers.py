"""Shared fixtures and finite-difference oracles for the learner tests."""

import numpy as np

from aoiplan.marl import MADDPG, Hyperparams

FD_STEP = 1e-5


def small_learner(num_agents=3, num_subchannels=3, seed=0, hidden=(16, 12), critic_hidden=(16, 12, 8),
                  **hp_overrides):
    hp = Hyperparams(actor_hidden=hidden, critic_hidden=critic_hidden, dtype="float64",
                     batch_size=8, buffer_capacity=1000, **hp_overrides)
    return MADDPG(num_agents, 2 * num_subchannels + 1, num_subchannels, hp, seed=seed)


def random_batch(learner, size, seed=1):
    rng = np.random.default_rng(seed)
    V, ds, da = learner.V, learner.state_dim, learner.action_dim
    acts = rng.uniform(-1, 1, (size, V, da))
    acts[..., -1] = rng.uniform(0, 1, (size, V))
    lr = rng.normal(0, 0.05, (size, V))
    return {
        "idx": np.arange(size),
        "states": rng.normal(0, 1, (size, V, ds)),
        "actions": acts,
        "local_rewards": lr,
        "global_rewards": lr.mean(axis=1),
        "next_states": rng.normal(0, 1, (size, V, ds)),
        "dones": (rng.random(size) < 0.2).astype(float),
    }


def fd_relative_error(loss, params, grads, rng, coords=60, eps=FD_STEP):
    """Relative error between analytic gradients and central differences on sampled coordinates."""
    sizes = np.array([p.size for p in params])
    picks = rng.choice(sizes.sum(), size=min(coords, sizes.sum()), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    num, ana = [], []
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(flat - offsets[k], params[k].shape)
        old = params[k][idx]
        params[k][idx] = old + eps
        up = loss()
        params[k][idx] = old - eps
        dn = loss()
        params[k][idx] = old
        num.append((up - dn) / (2 * eps))
        ana.append(grads[k][idx])
    num, ana = np.array(num), np.array(ana)
    scale = max(np.linalg.norm(num), np.linalg.norm(ana), 1e-12)
    return float(np.linalg.norm(num - ana) / scale)


def _sgd_gradient(params, lr, update):
    """Recover the gradient a plain SGD step applied, then undo the step."""
    before = [p.copy() for p in params]
    out = update()
    grads = [(b - p) / lr for b, p in zip(before, params)]
    for p, b in zip(params, before):
        p[...] = b
    return grads, out


def global_critic_fd_error(learner, batch, k, rng=None):
    rng = rng or np.random.default_rng(k)
    critic = learner.global_critics[k]
    y = learner.twin_global_target(batch)
    x = learner.joint_input(batch["states"], batch["actions"])
    grads, _ = _sgd_gradient(critic.params(), learner.hp.critic_lr,
                             lambda: learner.update_global_critics(batch))

    def loss():
        return float(np.mean((critic.forward(x, record=False)[:, 0] - y) ** 2))

    return fd_relative_error(loss, critic.params(), grads, rng)


def local_critic_fd_error(learner, batch, rng=None):
    rng = rng or np.random.default_rng(7)
    nets = learner.local_critics
    y = learner.local_target(batch)
    s = np.swapaxes(batch["states"], 0, 1)
    a = np.swapaxes(batch["actions"], 0, 1)
    xin = np.concatenate([s, a], -1)
    grads, _ = _sgd_gradient(nets.params(), learner.hp.critic_lr,
                             lambda: learner.update_local_critics(batch))

    def loss():  # sum over agents of each agent's mean squared error
        return float(np.sum(np.mean((nets.forward(xin, record=False)[..., 0] - y) ** 2, axis=1)))

    return fd_relative_error(loss, nets.params(), grads, rng)


def actor_fd_error(learner, batch, rng=None):
    rng = rng or np.random.default_rng(9)
    params = learner.actors.params()
    grads, _ = _sgd_gradient(params, learner.hp.actor_lr, lambda: learner.update_actors(batch))

    def loss():
        _, objective = learner.actor_gradients(batch)
        return -float(np.sum(objective))

    return fd_relative_error(loss, params, grads, rng)
