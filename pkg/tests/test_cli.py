import csv

import numpy as np
import pytest

from aoiplan import cli

SMALL = ["--set", "num_cvs=2", "--set", "channel.num_subchannels=2", "--set", "hyperparams.actor_hidden=[16,16]",
         "--set", "hyperparams.critic_hidden=[16,16,8]", "--set", "hyperparams.batch_size=16"]


def test_train_missing_config(capsys):
    assert cli.main(["train", "--config", "/no/such.yaml"]) != 0
    assert "config not found" in capsys.readouterr().err


def test_train_invalid_config_names_field(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text("num_cvs: -3\n")
    assert cli.main(["train", "--config", str(p)]) == cli.EXIT_USAGE
    assert "num_cvs" in capsys.readouterr().err


def test_train_zero_episodes(tmp_path):
    out = tmp_path / "run"
    assert cli.main(["train", "--episodes", "0", "--out-dir", str(out), *SMALL]) == 0
    assert (out / "checkpoint.npz").is_file() and (out / "training.csv").is_file()
    assert (out / "config.yaml").is_file()


def test_train_then_eval(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["train", "--episodes", "3", "--out-dir", str(out), *SMALL]) == 0
    rows = list(csv.reader(open(out / "training.csv")))
    assert rows[0] == ["episode", "avg_reward", "avg_aoi_ms", "exploration_scale"] and len(rows) == 4
    capsys.readouterr()
    assert cli.main(["eval", "--checkpoint", str(out / "checkpoint.npz"), "--episodes", "2",
                     "--out", str(out / "eval.json")]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert line.startswith("avg_aoi_ms=")
    assert float(line.split("=")[1]) >= 1.0
    assert (out / "eval.json").is_file()


def test_eval_perfect_channel(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["train", "--episodes", "0", "--out-dir", str(out), *SMALL, "--set", "num_cvs=1",
                     "--set", "channel.rate_floor_bps=1"]) == 0
    capsys.readouterr()
    assert cli.main(["eval", "--checkpoint", str(out / "checkpoint.npz"), "--episodes", "2"]) == 0
    assert capsys.readouterr().out.strip() == "avg_aoi_ms=1.000000"


def test_eval_missing_checkpoint(tmp_path):
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "x.npz")]) != 0


def test_eval_corrupt_checkpoint(tmp_path):
    p = tmp_path / "x.npz"
    p.write_text("junk")
    assert cli.main(["eval", "--checkpoint", str(p)]) == cli.EXIT_RUNTIME


def test_sweep_default(tmp_path):
    assert cli.main(["sweep", "--out-dir", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "sweep.csv")))
    assert rows[0] == ["aoi_ms", "delta_m", "avg_tt_s", "avg_voc"]
    assert len(rows) == 1 + 44 and len({len(r) for r in rows}) == 1
    curves = sorted(tmp_path.glob("sweep_dm_*.dat"))
    assert len(curves) == 4
    for c in curves:
        tt = np.loadtxt(c)[:, 1]
        assert np.all(np.diff(tt) >= 0)


def test_sweep_single_point(tmp_path):
    assert cli.main(["sweep", "--out-dir", str(tmp_path), "--aoi-grid", "50", "--delta-m", "10"]) == 0
    assert len(list(csv.reader(open(tmp_path / "sweep.csv")))) == 2


def test_sweep_zero_delta_flat(tmp_path):
    assert cli.main(["sweep", "--out-dir", str(tmp_path), "--aoi-grid", "0:100:25", "--delta-m", "0"]) == 0
    rows = list(csv.reader(open(tmp_path / "sweep.csv")))[1:]
    assert len(rows) == 5 and len({(r[2], r[3]) for r in rows}) == 1


@pytest.mark.parametrize("grid", ["", "a,b", "10:0:5", "0:100:0", "0,200", "10,10"])
def test_sweep_malformed_grid(tmp_path, grid):
    assert cli.main(["sweep", "--out-dir", str(tmp_path), "--aoi-grid", grid]) == cli.EXIT_USAGE


def test_sweep_negative_delta(tmp_path):
    assert cli.main(["sweep", "--out-dir", str(tmp_path), "--delta-m", "-1"]) == cli.EXIT_USAGE


def test_parse_range():
    assert cli.parse_number_list("0:100:10", "x") == [float(v) for v in range(0, 101, 10)]
    assert cli.parse_number_list("1, 2.5", "x") == [1.0, 2.5]


def test_validate_and_show_config(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    assert cli.main(["show-config"]) == 0
    p.write_text(capsys.readouterr().out)
    assert cli.main(["validate-config", "--config", str(p)]) == 0
    assert capsys.readouterr().out.startswith("ok")


def test_unknown_command():
    assert cli.main(["bogus"]) == cli.EXIT_USAGE


def test_bad_override():
    assert cli.main(["validate-config", "--set", "novalue"]) == cli.EXIT_USAGE
