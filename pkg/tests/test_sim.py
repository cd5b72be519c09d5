import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aoiplan import radio, sim, traffic
from aoiplan.config import ScenarioConfig


def tiny_config(**overrides):
    base = {"num_cvs": 2, "channel.num_subchannels": 2, "hyperparams.actor_hidden": [16, 16],
            "hyperparams.critic_hidden": [16, 16, 8], "hyperparams.batch_size": 16,
            "hyperparams.buffer_capacity": 5000}
    base.update(overrides)
    return ScenarioConfig().with_overrides(base)


def perfect_env():
    return sim.V2IEnvironment(radio.ChannelParams(rate_floor_bps=1.0), num_cvs=1, seed=3)


# -- state encoding ---------------------------------------------------------------

def test_state_layout_and_round_trip():
    p = radio.ChannelParams()
    gains = np.array([[1e-10, 2e-11, 3e-12]])
    intf = np.array([[0.0, 1e-9, 5e-12]])
    s = sim.normalize_state(gains, intf, np.array([40.0]), p.noise_mw, 100.0)
    assert s.shape == (1, 7)
    assert s[0, 0] == pytest.approx(-100 / 120)
    assert s[0, 3] == pytest.approx(-114 / 114)
    assert s[0, 6] == pytest.approx(0.4)
    g2, i2, a2 = sim.denormalize_state(s, 3, p.noise_mw, 100.0)
    np.testing.assert_allclose(g2, gains, rtol=1e-9)
    np.testing.assert_allclose(i2, intf, rtol=1e-6, atol=1e-20)
    assert a2[0] == pytest.approx(40.0)


# -- episodes ---------------------------------------------------------------------------

def test_perfect_channel_single_cv():
    env = perfect_env()
    pol = sim.FixedPolicy(3, env.params.max_power_mw, subchannel=0, power_fraction=1.0)
    ep = sim.run_episode(env, pol, rng=np.random.default_rng(0))
    assert ep.num_slots == 100
    assert ep.mean_aoi == 1.0


def test_forced_silence_grows_linearly():
    env = sim.V2IEnvironment(num_cvs=4, seed=1)
    pol = sim.FixedPolicy(3, env.params.max_power_mw, power_fraction=0.0)
    ep = sim.run_episode(env, pol, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(ep.aoi[:, 0], np.arange(1, 101))
    assert ep.mean_aoi == pytest.approx(50.5)


def test_aoi_replay_matches_log():
    env = sim.V2IEnvironment(num_cvs=20, seed=5)
    pol = sim.RandomPolicy(3, env.params.max_power_mw)
    ep = sim.run_episode(env, pol, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(sim.replay_aoi(ep, env.params), ep.aoi)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8))
def test_aoi_accounting_property(seed, V):
    env = sim.V2IEnvironment(num_cvs=V, seed=seed)
    ep = sim.run_episode(env, sim.RandomPolicy(3, env.params.max_power_mw), rng=np.random.default_rng(seed))
    np.testing.assert_array_equal(sim.replay_aoi(ep, env.params), ep.aoi)
    steps = np.diff(np.vstack([np.zeros((1, V)), ep.aoi]), axis=0)
    assert np.all((ep.aoi == 1.0) | (steps == 1.0) | (ep.aoi == 100.0))


def test_episode_is_deterministic():
    logs = []
    for _ in range(2):
        env = sim.V2IEnvironment(num_cvs=6, seed=11)
        logs.append(sim.run_episode(env, sim.RandomPolicy(3, 1000.0), rng=np.random.default_rng(4)))
    for field in ("aoi", "local_rewards", "subchannels", "powers_mw", "rates"):
        np.testing.assert_array_equal(getattr(logs[0], field), getattr(logs[1], field))


def test_rewards_match_definition():
    env = sim.V2IEnvironment(num_cvs=5, seed=2)
    ep = sim.run_episode(env, sim.RandomPolicy(3, 1000.0), rng=np.random.default_rng(2))
    p = env.params
    ok = (ep.rates >= p.rate_floor_bps) & (ep.powers_mw > 0)
    expected = -ep.aoi / (5 * 100.0) + 0.05 * ok
    np.testing.assert_allclose(ep.local_rewards, expected, atol=1e-15)
    np.testing.assert_allclose(ep.global_rewards, ep.local_rewards.mean(axis=1))


def test_trace_file(tmp_path):
    env = sim.V2IEnvironment(num_cvs=3, seed=0)
    ep = sim.run_episode(env, sim.RandomPolicy(3, 1000.0), rng=np.random.default_rng(0), keep_gains=True)
    path = tmp_path / "trace.csv"
    sim.write_trace(ep, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == sim.TRACE_HEADER
    assert len(rows) == 1 + 300 and all(len(r) == 6 for r in rows)


# -- training / evaluation ------------------------------------------------------------------

def test_zero_episode_training(tmp_path):
    res = sim.train(tiny_config(), out_dir=tmp_path, episodes=0)
    assert res.history == []
    rows = list(csv.reader(open(tmp_path / "training.csv")))
    assert rows == [sim.TRAINING_HEADER]
    learner, meta = sim.load_checkpoint(tmp_path / "checkpoint.npz")
    assert meta["counters"]["episodes"] == 0 and learner.V == 2


def test_training_artifacts_and_checkpoint_round_trip(tmp_path):
    cfg = tiny_config()
    res = sim.train(cfg, out_dir=tmp_path, episodes=5)
    rows = list(csv.reader(open(tmp_path / "training.csv")))
    assert rows[0] == sim.TRAINING_HEADER and len(rows) == 6
    assert len({len(r) for r in rows}) == 1
    learner, meta = sim.load_checkpoint(tmp_path / "checkpoint.npz")
    s = np.random.default_rng(0).normal(size=(2, learner.state_dim))
    np.testing.assert_array_equal(learner.act(s), res.learner.act(s))
    assert meta["config"] == cfg.to_dict()


def test_training_is_reproducible():
    cfg = tiny_config()
    a = sim.train(cfg, episodes=4)
    b = sim.train(cfg, episodes=4)
    assert a.history == b.history


def test_policy_delay_trace():
    cfg = tiny_config(**{"hyperparams.updates_per_episode": 1})
    res = sim.train(cfg, episodes=12)
    c = res.learner.counters
    # learning starts once the buffer holds a batch (first episode: 100 transitions >= 16)
    assert c["global_updates"] == 12
    assert c["policy_updates"] == 6


def test_smoke_training_reduces_aoi():
    cfg = tiny_config(**{"hyperparams.updates_per_episode": 20})
    res = sim.train(cfg, episodes=200)
    curve = res.aoi_curve
    assert curve[-50:].mean() < curve[:50].mean()


def test_random_policy_worse_than_trained_smoke():
    cfg = tiny_config(**{"hyperparams.updates_per_episode": 20})
    res = sim.train(cfg, episodes=200)
    trained = sim.evaluate(res.learner, episodes=10, cfg=cfg, seed=77)
    env = sim.V2IEnvironment(cfg.channel, cfg.num_cvs, cfg.grid, seed=77)
    rnd = sim.evaluate_policy(env, sim.RandomPolicy(2, env.params.max_power_mw), 10, np.random.default_rng(77))
    assert rnd.avg_aoi_ms > trained.avg_aoi_ms


def test_evaluate_perfect_channel_checkpoint(tmp_path):
    cfg = tiny_config(**{"num_cvs": 1, "channel.rate_floor_bps": 1.0})
    sim.train(cfg, out_dir=tmp_path, episodes=0)
    res = sim.evaluate(tmp_path / "checkpoint.npz", episodes=3)
    assert res.avg_aoi_ms == 1.0 and res.ci_half_width_ms == 0.0


def test_evaluate_forced_silence():
    env = sim.V2IEnvironment(num_cvs=3, seed=0)
    res = sim.evaluate_policy(env, sim.FixedPolicy(3, 1000.0, power_fraction=0.0), 4)
    assert res.avg_aoi_ms == pytest.approx(50.5)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(sim.CheckpointError):
        sim.load_checkpoint(tmp_path / "missing.npz")
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a zip")
    with pytest.raises(sim.CheckpointError):
        sim.load_checkpoint(bad)


def test_checkpoint_fleet_mismatch(tmp_path):
    sim.train(tiny_config(), out_dir=tmp_path, episodes=0)
    with pytest.raises(sim.CheckpointError):
        sim.evaluate(tmp_path / "checkpoint.npz", episodes=1, cfg=tiny_config(num_cvs=3))


# -- sweep ---------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def default_sweep():
    cfg = ScenarioConfig()
    return sim.aoi_capacity_sweep(cfg.network.build(), cfg.sweep.aoi_grid_ms, cfg.sweep.delta_m)


def test_sweep_shape(default_sweep):
    assert len(default_sweep.rows) == 11 * 4 and not default_sweep.failures


def test_sweep_baseline_row_identical(default_sweep):
    base = {(r[2], r[3]) for r in default_sweep.rows if r[0] == 0}
    assert len(base) == 1
    tt, vc = base.pop()
    assert vc == pytest.approx(640 / 48 / 30)  # total Manhattan trip length over links and capacity
    assert vc < 1


def test_sweep_travel_time_monotone(default_sweep):
    for dm in (5, 10, 15, 20):
        tts = [r[2] for r in default_sweep.curve(dm)]
        assert all(b >= a for a, b in zip(tts, tts[1:]))


def test_sweep_delta_m_ordering(default_sweep):
    for a in range(0, 101, 10):
        rows = sorted((r for r in default_sweep.rows if r[0] == a), key=lambda r: r[1])
        assert all(y[2] >= x[2] and y[3] >= x[3] for x, y in zip(rows, rows[1:]))


def test_sweep_crosses_unit_voc(default_sweep):
    assert max(r[3] for r in default_sweep.curve(20)) > 1.0


def test_sweep_zero_delta_flat():
    net = traffic.grid_network()
    res = sim.aoi_capacity_sweep(net, [0, 50, 100], [0])
    assert len({(r[2], r[3]) for r in res.rows}) == 1


def test_sweep_single_point():
    res = sim.aoi_capacity_sweep(traffic.grid_network(), [30], [10])
    assert len(res.rows) == 1


def test_sweep_is_deterministic():
    net = traffic.grid_network()
    assert sim.aoi_capacity_sweep(net, [0, 40], [5, 10]).rows == sim.aoi_capacity_sweep(net, [0, 40], [5, 10]).rows


def test_sweep_per_link_override():
    net = traffic.grid_network()
    res = sim.aoi_capacity_sweep(net, [0], [20], link_aoi={0: 100.0})
    base = sim.aoi_capacity_sweep(net, [0], [20])
    assert res.rows[0][2] > base.rows[0][2]


def test_sweep_rejects_bad_grid():
    net = traffic.grid_network()
    with pytest.raises(traffic.InvalidParameter):
        sim.aoi_capacity_sweep(net, [10, 10], [5])
    with pytest.raises(traffic.InvalidParameter):
        sim.aoi_capacity_sweep(net, [150], [5])


def test_sweep_unreachable_destination_reported():
    net = traffic.RoadNetwork([0, 1, 2], [traffic.Link(0, 0, 1, 1, 1, 30)], [(0, 2, 5.0)])
    res = sim.aoi_capacity_sweep(net, [0, 10], [5])
    assert len(res.failures) == 2 and all(np.isnan(r[2]) for r in res.rows)


def test_sweep_files(tmp_path, default_sweep):
    default_sweep.write_csv(tmp_path / "sweep.csv")
    rows = list(csv.reader(open(tmp_path / "sweep.csv")))
    assert rows[0] == sim.SWEEP_HEADER and len({len(r) for r in rows}) == 1
    paths = default_sweep.write_curves(tmp_path)
    assert len(paths) == 4
    data = np.loadtxt(paths[0])
    assert data.shape == (11, 3)
