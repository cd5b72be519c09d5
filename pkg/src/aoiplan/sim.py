"""End-to-end orchestration: RRM training episodes, policy evaluation and the AoI sweep."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import radio, traffic
from .marl import MADDPG, Hyperparams, ReplayBuffer, Transition, decode_action, global_reward, local_reward
from .marl.maddpg import exploration_scale

log = logging.getLogger(__name__)

GAIN_DB_SCALE = 120.0
INTERFERENCE_DBM_SCALE = 114.0

TRAINING_HEADER = ["episode", "avg_reward", "avg_aoi_ms", "exploration_scale"]
SWEEP_HEADER = ["aoi_ms", "delta_m", "avg_tt_s", "avg_voc"]
TRACE_HEADER = ["t_ms", "cv_id", "subchannel", "gain_db", "rate_bps", "aoi_ms"]


# -- environment ----------------------------------------------------------------

def normalize_state(gains, prev_interference_mw, aoi_ms, noise_mw, aoi_max_ms):
    """Agent observations [gain dB/120 per subchannel, interference dBm/114, AoI/A_max]."""
    g = np.asarray(gains, dtype=float)
    gain_db = radio.linear_to_db(np.maximum(g, 1e-30)) / GAIN_DB_SCALE
    intf_dbm = radio.linear_to_db(np.asarray(prev_interference_mw) + noise_mw) / INTERFERENCE_DBM_SCALE
    aoi = (np.asarray(aoi_ms, dtype=float) / aoi_max_ms)[..., None]
    return np.concatenate([gain_db, intf_dbm, aoi], axis=-1)


def denormalize_state(state, num_subchannels, noise_mw, aoi_max_ms):
    """Inverse of :func:`normalize_state` -> (gains, prev_interference_mw, aoi_ms)."""
    n = num_subchannels
    gains = radio.db_to_linear(state[..., :n] * GAIN_DB_SCALE)
    intf = radio.db_to_linear(state[..., n:2 * n] * INTERFERENCE_DBM_SCALE) - noise_mw
    return gains, np.maximum(intf, 0.0), state[..., 2 * n] * aoi_max_ms


class V2IEnvironment:
    """Fleet of CVs sharing N uplink subchannels toward one base station."""

    def __init__(self, params: radio.ChannelParams | None = None, num_cvs=20,
                 grid: radio.GridGeometry | None = None, seed=0, reposition="uniform"):
        self.params = params or radio.ChannelParams()
        self.num_cvs = int(num_cvs)
        if reposition not in ("uniform", "mobility"):
            raise ValueError(f"unknown reposition mode {reposition!r}")
        self.reposition = reposition
        self.channel = radio.RadioChannel(self.params, self.num_cvs, grid, seed=seed)
        self.episodes = 0
        N = self.params.num_subchannels
        self.aoi = np.zeros(self.num_cvs)
        self.prev_interference = np.zeros((self.num_cvs, N))
        self.t = 0

    @property
    def state_dim(self) -> int:
        return 2 * self.params.num_subchannels + 1

    def reset(self):
        """Start an episode: refresh positions and large-scale fading, zero the ages."""
        p = self.params
        if self.episodes > 0:
            if self.reposition == "uniform":
                self.channel.place_all()
            else:
                self.channel.move_all(p.budget_ms / 1000.0)
        self.episodes += 1
        self.aoi = np.zeros(self.num_cvs)
        self.prev_interference = np.zeros((self.num_cvs, p.num_subchannels))
        self.t = 0
        self.channel.refresh_fast_fading()
        return self.observe()

    def observe(self):
        p = self.params
        return normalize_state(self.channel.gains(), self.prev_interference, self.aoi,
                               p.noise_mw, p.aoi_max_ms)

    def step(self, subchannels, powers_mw):
        """Resolve one slot and advance fast fading; returns (next_states, rewards, info)."""
        p = self.params
        subchannels = np.asarray(subchannels, dtype=int)
        powers_mw = np.clip(np.asarray(powers_mw, dtype=float), 0.0, p.max_power_mw)
        gains = self.channel.gains()
        rates, interference, _ = self.channel.resolve_slot(subchannels, powers_mw)
        allocated = (subchannels >= 0) & (powers_mw > 0)
        self.aoi = radio.update_aoi(self.aoi, rates, allocated, p.rate_floor_bps, p.slot_ms,
                                    p.aoi_max_ms)
        rewards = local_reward(self.aoi, np.where(allocated, rates, 0.0), p.rate_floor_bps,
                               self.num_cvs, p.aoi_max_ms)
        self.prev_interference = interference
        self.t += 1
        done = self.t >= p.slots_per_episode
        info = {"rates": rates, "allocated": allocated, "aoi": self.aoi.copy(), "gains": gains,
                "success": allocated & (rates >= p.rate_floor_bps), "done": done}
        if p.fast_fading_update_ms <= p.slot_ms or self.t % round(p.fast_fading_update_ms / p.slot_ms) == 0:
            self.channel.refresh_fast_fading()
        return self.observe(), np.atleast_1d(rewards), info


# -- policies ----------------------------------------------------------------------

class LearnedPolicy:
    def __init__(self, learner: MADDPG, max_power_mw):
        self.learner = learner
        self.max_power_mw = max_power_mw

    def __call__(self, states, noise_scale=0.0, rng=None):
        actions = self.learner.act(states, noise_scale, rng)
        sub, power = decode_action(actions, self.learner.N, self.max_power_mw)
        return actions, sub, power


class RandomPolicy:
    """Uniform subchannel and uniform power in [0, p_max]."""

    def __init__(self, num_subchannels, max_power_mw):
        self.N = num_subchannels
        self.max_power_mw = max_power_mw

    def __call__(self, states, noise_scale=0.0, rng=None):
        V = len(states)
        actions = np.concatenate([rng.uniform(-1, 1, (V, self.N)), rng.uniform(0, 1, (V, 1))], axis=1)
        sub, power = decode_action(actions, self.N, self.max_power_mw)
        return actions, sub, power


class FixedPolicy:
    """Every CV uses the given subchannel index/power every slot (tests, sanity checks)."""

    def __init__(self, num_subchannels, max_power_mw, subchannel=0, power_fraction=1.0):
        self.N = num_subchannels
        self.max_power_mw = max_power_mw
        self.subchannel = subchannel
        self.power_fraction = power_fraction

    def __call__(self, states, noise_scale=0.0, rng=None):
        V = len(states)
        actions = -np.ones((V, self.N + 1))
        sub = np.broadcast_to(np.asarray(self.subchannel), (V,)).astype(int)
        actions[np.arange(V), sub] = 1.0
        actions[:, self.N] = self.power_fraction
        return actions, sub, actions[:, self.N] * self.max_power_mw


# -- episodes ------------------------------------------------------------------------

@dataclass
class EpisodeLog:
    aoi: np.ndarray            # (slots, V) age after each slot
    local_rewards: np.ndarray  # (slots, V)
    global_rewards: np.ndarray  # (slots,)
    subchannels: np.ndarray    # (slots, V)
    powers_mw: np.ndarray      # (slots, V)
    rates: np.ndarray          # (slots, V)
    gains: np.ndarray = None   # (slots, V, N), optional

    @property
    def num_slots(self) -> int:
        return len(self.aoi)

    @property
    def mean_aoi(self) -> float:
        return float(self.aoi.mean())

    @property
    def mean_reward(self) -> float:
        return float(self.global_rewards.mean())


def run_episode(env: V2IEnvironment, policy, learner: MADDPG | None = None, buffer=None,
                learn=False, rng=None, noise_scale=0.0, episode_index=0, keep_gains=False):
    """Play one episode of ``slots_per_episode`` slots; optionally store and learn."""
    rng = rng if rng is not None else np.random.default_rng()
    p = env.params
    T = p.slots_per_episode
    V = env.num_cvs
    states = env.reset()
    rec = {k: [] for k in ("aoi", "lr", "gr", "sub", "pw", "rate", "gain")}
    for _ in range(T):
        actions, sub, power = policy(states, noise_scale, rng)
        next_states, rewards, info = env.step(sub, power)
        rg = global_reward(rewards)
        if buffer is not None:
            buffer.add(Transition(states, actions, rewards, rg, next_states, info["done"]))
        rec["aoi"].append(info["aoi"])
        rec["lr"].append(rewards)
        rec["gr"].append(rg)
        rec["sub"].append(sub)
        rec["pw"].append(power)
        rec["rate"].append(info["rates"])
        if keep_gains:
            rec["gain"].append(info["gains"])
        states = next_states
    info = None
    if learn and learner is not None and buffer is not None:
        info = learner.learn(buffer, episode_index, rng)
    ep = EpisodeLog(np.array(rec["aoi"]).reshape(T, V), np.array(rec["lr"]).reshape(T, V),
                    np.array(rec["gr"]), np.array(rec["sub"]).reshape(T, V),
                    np.array(rec["pw"]).reshape(T, V), np.array(rec["rate"]).reshape(T, V),
                    np.array(rec["gain"]) if keep_gains else None)
    ep.learn_info = info
    return ep


def replay_aoi(ep: EpisodeLog, params: radio.ChannelParams):
    """Recompute the AoI trajectory from logged decisions and rates."""
    aoi = np.zeros(ep.aoi.shape[1])
    out = []
    for t in range(ep.num_slots):
        allocated = (ep.subchannels[t] >= 0) & (ep.powers_mw[t] > 0)
        aoi = radio.update_aoi(aoi, ep.rates[t], allocated, params.rate_floor_bps, params.slot_ms,
                               params.aoi_max_ms)
        out.append(aoi)
    return np.array(out)


def write_trace(ep: EpisodeLog, path, slot_ms=1.0):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for t in range(ep.num_slots):
            for v in range(ep.aoi.shape[1]):
                n = int(ep.subchannels[t, v])
                g = ep.gains[t, v, n] if ep.gains is not None and n >= 0 else float("nan")
                w.writerow([f"{(t + 1) * slot_ms:g}", v, n, f"{radio.linear_to_db(g):.3f}",
                            f"{ep.rates[t, v]:.1f}", f"{ep.aoi[t, v]:g}"])


# -- training ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    learner: MADDPG
    history: list = field(default_factory=list)  # rows matching TRAINING_HEADER
    elapsed_s: float = 0.0

    @property
    def aoi_curve(self):
        return np.array([r[2] for r in self.history])

    @property
    def reward_curve(self):
        return np.array([r[1] for r in self.history])


def build_learner(cfg, env: V2IEnvironment):
    return MADDPG(env.num_cvs, env.state_dim, env.params.num_subchannels, cfg.hyperparams,
                  seed=cfg.seed + 1)


def build_environment(cfg, seed_offset=0):
    return V2IEnvironment(cfg.channel, cfg.num_cvs, cfg.grid, seed=cfg.seed + seed_offset,
                          reposition=cfg.reposition)


def train(cfg, out_dir=None, episodes=None, progress=None):
    """Run the training loop; writes ``training.csv`` and ``checkpoint.npz`` when ``out_dir`` is set."""
    episodes = cfg.episodes if episodes is None else int(episodes)
    env = build_environment(cfg)
    learner = build_learner(cfg, env)
    hp = learner.hp
    buffer = ReplayBuffer(hp.buffer_capacity, env.num_cvs, env.state_dim, learner.action_dim,
                          dtype=np.dtype(hp.dtype))
    policy = LearnedPolicy(learner, env.params.max_power_mw)
    rng = np.random.default_rng(cfg.seed + 2)
    history = []
    start = time.perf_counter()
    for e in range(episodes):
        scale = exploration_scale(e, hp)
        ep = run_episode(env, policy, learner, buffer, learn=True, rng=rng, noise_scale=scale,
                         episode_index=e)
        learner.counters["episodes"] += 1
        history.append([e, ep.mean_reward, ep.mean_aoi, scale])
        if progress is not None:
            progress(e, ep)
        elif e % 50 == 0:
            log.info("episode %d: avg AoI %.2f ms, reward %.4f", e, ep.mean_aoi, ep.mean_reward)
    result = TrainResult(learner, history, time.perf_counter() - start)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "training.csv", TRAINING_HEADER,
                  [[e, f"{r:.6f}", f"{a:.4f}", f"{s:.6g}"] for e, r, a, s in history])
        save_checkpoint(out / "checkpoint.npz", learner, cfg)
    return result


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


# -- checkpoints --------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, learner: MADDPG, cfg=None):
    """npz layout: ``meta`` (JSON string) plus ``<network>/<k>`` arrays, k = 2*layer (+1 for bias)."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "num_agents": learner.V,
        "state_dim": learner.state_dim,
        "num_subchannels": learner.N,
        "hyperparams": learner.hp.as_dict(),
        "counters": learner.counters,
        "layers": {name: net.sizes for name, net in learner.networks().items()},
        "config": cfg.to_dict() if cfg is not None else None,
    }
    arrays = {"meta": np.array(json.dumps(meta))}
    for name, net in learner.networks().items():
        for k, a in enumerate(net.params()):
            arrays[f"{name}/{k}"] = a
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns ``(learner, meta)``; raises :class:`CheckpointError` on unreadable files."""
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {meta.get('version')!r}")
            hp = Hyperparams(**{k: tuple(v) if isinstance(v, list) else v
                                for k, v in meta["hyperparams"].items()})
            learner = MADDPG(meta["num_agents"], meta["state_dim"], meta["num_subchannels"], hp)
            for name, net in learner.networks().items():
                if list(net.sizes) != list(meta["layers"][name]):
                    raise CheckpointError(f"{name}: layer sizes disagree with metadata")
                arrays = [data[f"{name}/{k}"] for k in range(len(net.params()))]
                learner.load_arrays(name, arrays)
            learner.counters = dict(meta["counters"])
    except CheckpointError:
        raise
    except Exception as exc:  # zip, key and JSON failures all mean the same thing here
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
    return learner, meta


# -- evaluation ----------------------------------------------------------------------------

@dataclass
class EvalResult:
    avg_aoi_ms: float
    ci_half_width_ms: float
    episodes: int
    per_episode: list

    def to_dict(self):
        return {"avg_aoi_ms": self.avg_aoi_ms, "ci95_half_width_ms": self.ci_half_width_ms,
                "episodes": self.episodes, "per_episode_aoi_ms": self.per_episode}


def evaluate_policy(env: V2IEnvironment, policy, episodes=20, rng=None):
    """Noise-free rollouts; mean AoI with a normal-approximation 95% half-width."""
    rng = rng if rng is not None else np.random.default_rng(0)
    per = [run_episode(env, policy, rng=rng).mean_aoi for _ in range(int(episodes))]
    mean = float(np.mean(per)) if per else float("nan")
    half = float(1.96 * np.std(per, ddof=1) / math.sqrt(len(per))) if len(per) > 1 else 0.0
    return EvalResult(mean, half, len(per), per)


def evaluate(checkpoint, episodes=20, cfg=None, seed=None):
    """Evaluate a checkpoint file (or an in-memory learner) on fresh episodes."""
    from .config import ScenarioConfig

    if isinstance(checkpoint, MADDPG):
        learner, meta = checkpoint, {"config": None}
    else:
        learner, meta = load_checkpoint(checkpoint)
    if cfg is None:
        cfg = ScenarioConfig.from_dict(meta["config"]) if meta.get("config") else ScenarioConfig()
    seed = cfg.seed + 1000 if seed is None else seed
    env = V2IEnvironment(cfg.channel, cfg.num_cvs, cfg.grid, seed=seed, reposition=cfg.reposition)
    if env.num_cvs != learner.V or env.params.num_subchannels != learner.N:
        raise CheckpointError("checkpoint does not match the scenario's fleet or subchannel count")
    policy = LearnedPolicy(learner, env.params.max_power_mw)
    return evaluate_policy(env, policy, episodes, np.random.default_rng(seed))


# -- AoI -> capacity -> assignment sweep -----------------------------------------------------

@dataclass
class SweepResult:
    rows: list  # (aoi_ms, delta_m, avg_tt_s, avg_voc)
    failures: list = field(default_factory=list)

    def curve(self, delta_m):
        return [r for r in self.rows if r[1] == delta_m]

    def write_csv(self, path):
        write_csv(path, SWEEP_HEADER, [[f"{a:g}", f"{d:g}", f"{tt:.6f}", f"{vc:.6f}"]
                                       for a, d, tt, vc in self.rows])

    def write_curves(self, out_dir):
        """One whitespace-separated data file per delta_m, plottable with gnuplot."""
        out_dir = Path(out_dir)
        paths = []
        for dm in sorted({r[1] for r in self.rows}):
            p = out_dir / f"sweep_dm_{dm:g}.dat"
            with open(p, "w") as fh:
                fh.write(f"# delta_m = {dm:g}\n# aoi_ms avg_tt_s avg_voc\n")
                for a, _, tt, vc in self.curve(dm):
                    fh.write(f"{a:g} {tt:.6f} {vc:.6f}\n")
            paths.append(p)
        return paths


def aoi_capacity_sweep(network: traffic.RoadNetwork, aoi_values, delta_m_values, aoi_max=100.0,
                       tolerance=1e-4, max_iterations=500, link_aoi=None):
    """Travel time and V/C of the planner's equilibrium against real capacities.

    The planner assigns traffic on the capacities it holds (the network's
    link capacities).  Information that is ``aoi`` old hides a capacity
    drop of (aoi / aoi_max) * delta_m, so the real capacities the drivers
    meet are lower.  ``link_aoi`` optionally maps link index -> AoI to
    override the network-wide value per link.
    """
    aoi_values = sorted(float(a) for a in aoi_values)
    delta_m_values = sorted(float(d) for d in delta_m_values)
    for a in aoi_values:
        if a < 0 or a > aoi_max:
            raise traffic.InvalidParameter(f"aoi {a} outside [0, {aoi_max}]")
    if len(set(aoi_values)) != len(aoi_values):
        raise traffic.InvalidParameter("duplicate AoI grid values")
    planner_caps = network.capacities
    rows, failures = [], []
    try:
        flows = traffic.frank_wolfe_ue(network, planner_caps, tolerance=tolerance,
                                       max_iterations=max_iterations)
    except traffic.NoPathError as exc:
        for dm in delta_m_values:
            for a in aoi_values:
                rows.append((a, dm, float("nan"), float("nan")))
                failures.append((a, dm, str(exc)))
        return SweepResult(rows, failures)
    for dm in delta_m_values:
        for a in aoi_values:
            aoi = np.full(network.num_links, a)
            if link_aoi:
                for k, v in link_aoi.items():
                    aoi[k] = v
            real = traffic.true_capacity_from_estimate(planner_caps, aoi, aoi_max, dm)
            tt, vc = traffic.network_metrics(flows, network, real)
            rows.append((a, dm, tt, vc))
    return SweepResult(rows, failures)
