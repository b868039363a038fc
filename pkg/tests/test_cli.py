import csv

import numpy as np

from gaitforge.cli import main
from gaitforge.policy import load_policy, save_policy, warm_start

TINY = """
[experiment]
seed = 1
workers = 1
[policy]
task = slope
[trainer]
iterations = 2
n_directions = 2
top_b = 1
episode_len = 1000
checkpoint_every = 1
[eval]
trials = 2
episode_len = 3000
"""


def write_config(tmp_path, text=TINY):
    path = tmp_path / "exp.ini"
    path.write_text(text)
    return path


def policy_file(tmp_path, task="slope"):
    path = tmp_path / "policy.txt"
    save_policy(warm_start(task), path)
    return path


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["train", str(tmp_path / "absent.ini")]) == 2
    assert "absent.ini" in capsys.readouterr().err


def test_zero_iterations_writes_warm_start(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", str(cfg), "--iterations", "0", "--out", str(tmp_path / "run"),
                 "--quiet"]) == 0
    assert load_policy(tmp_path / "run" / "policy.txt") == warm_start("slope")


def test_train_writes_checkpoints_every_k(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["train", str(cfg), "--out", str(out), "--quiet"]) == 0
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == \
        ["policy_0000.txt", "policy_0001.txt", "policy_0002.txt"]
    rows = list(csv.reader(open(out / "train_log.csv")))
    assert rows[0] == ["iteration", "reward_mean", "reward_max", "sigma_R", "distance_mean"]
    assert [r[0] for r in rows[1:]] == ["1", "2"]


def test_nonfinite_config_value_exits_2(tmp_path):
    cfg = write_config(tmp_path, TINY + "[physics]\ndt = 0.5\n")
    assert main(["train", str(cfg), "--quiet", "--out", str(tmp_path / "r")]) == 2


def test_corrupt_policy_exits_4(tmp_path, capsys):
    path = policy_file(tmp_path)
    lines = path.read_text().splitlines()
    lines[7] = " ".join(["1.0"] + lines[7].split()[1:])
    path.write_text("\n".join(lines) + "\n")
    assert main(["eval", str(path), "--config", str(write_config(tmp_path))]) == 4
    assert "corrupt policy" in capsys.readouterr().err


def test_eval_is_deterministic(tmp_path):
    pol, cfg = policy_file(tmp_path), write_config(tmp_path)
    for name in ("a", "b"):
        assert main(["eval", str(pol), "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    for f in ("metrics.txt", "rollout_log.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    text = (tmp_path / "a" / "metrics.txt").read_text()
    assert text.count("[trial") == 2 and "torso_stability = " in text


def test_eval_push_reports_recovery(tmp_path):
    pol, cfg = policy_file(tmp_path), write_config(tmp_path)
    out = tmp_path / "push"
    assert main(["eval", str(pol), "--config", str(cfg), "--push", "5.0", "--push-dir",
                 "lateral", "--trials", "1", "--ticks", "12000", "--out", str(out)]) == 0
    assert "recovered = True" in (out / "metrics.txt").read_text()


def test_sweep_rows_and_errors(tmp_path):
    pol, cfg = policy_file(tmp_path), write_config(tmp_path)
    out = tmp_path / "sweep.csv"
    args = ["sweep", str(pol), "--config", str(cfg), "--ticks", "500", "--out", str(out)]
    assert main(args + ["--velocities", "0.1:0.1:0.3", "--terrains", "flat,slope:5"]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["terrain", "v_target", "mean_distance", "mean_ticks"]
    assert len(rows) == 1 + 2 * 3
    assert [r[0] for r in rows[1:]] == ["flat"] * 3 + ["slope:5"] * 3
    assert main(args + ["--velocities", "0.1:0.1:0.3", "--terrains", ""]) == 2
    assert main(args + ["--velocities", "0.3:0.1", "--terrains", "flat"]) == 2
    assert main(args + ["--velocities", "0.1", "--terrains", "hills:3"]) == 2


def test_rollout_writes_log(tmp_path):
    pol = policy_file(tmp_path, "command")
    out = tmp_path / "log.csv"
    assert main(["rollout", str(pol), "--ticks", "400", "--log-every", "4", "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert data.shape[0] == 100
    assert out.with_suffix(".metrics.txt").exists()


def test_usage_error_exits_2():
    assert main(["fly"]) == 2
