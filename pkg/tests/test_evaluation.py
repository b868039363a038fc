import math

import numpy as np
import pytest

from gaitforge.evaluation import (DegenerateDistance, EmptyLog, RolloutLog, cost_of_transport,
                                  push_test, torso_stability, velocity_sweep, write_sweep_csv)
from gaitforge.policy import CommandState, warm_start
from gaitforge.robot_model import RobotModel
from gaitforge.rollout import LOG_COLUMNS, EpisodeRunner, EpisodeSetup
from gaitforge.terrain import Terrain

COL = {c: i for i, c in enumerate(LOG_COLUMNS)}


def blank(n):
    d = np.zeros((n, len(LOG_COLUMNS)))
    d[:, COL["time"]] = np.arange(1, n + 1) * 0.01
    return d


def test_level_log_is_four():
    assert torso_stability(RolloutLog(blank(5))) == 4.0


def test_single_tick_height_error():
    d = blank(1)
    d[0, COL["e_pz"]] = 0.1   # w4 = 100
    assert torso_stability(RolloutLog(d)) == pytest.approx(3 + math.exp(-1), abs=1e-12)


def test_two_ticks_average():
    d = blank(2)
    d[1, COL["roll"]] = 0.2
    one = 3 + math.exp(-10 * 0.04)
    assert torso_stability(RolloutLog(d)) == pytest.approx((4 + one) / 2, abs=1e-12)


def test_heading_error_wraps_in_stability():
    d = blank(1)
    d[0, COL["yaw"]], d[0, COL["cmd_yaw"]] = 3.1, -3.1
    e = 2 * math.pi - 6.2
    assert torso_stability(RolloutLog(d)) == pytest.approx(3 + math.exp(-5 * e * e), abs=1e-12)


def test_empty_log():
    with pytest.raises(EmptyLog):
        torso_stability(RolloutLog(np.zeros((0, len(LOG_COLUMNS)))))


def cot_log(power):
    # 10 s at 0.01 s, walking 5 m along x
    d = blank(1000)
    d[:, COL["x"]] = np.linspace(0.0, 5.0, 1000)
    d[:, COL["tau_0"]] = power
    d[:, COL["qd_0"]] = 1.0
    return RolloutLog(d)


def test_cost_of_transport():
    assert RobotModel().total_mass == pytest.approx(48.0)
    assert cost_of_transport(cot_log(100.0)) == pytest.approx(1000 / (48 * 9.81 * 5), rel=1e-12)
    assert cost_of_transport(cot_log(100.0)) == pytest.approx(0.4247, abs=1e-4)


def test_cot_zero_and_negative_power():
    assert cost_of_transport(cot_log(0.0)) == 0.0
    assert cost_of_transport(cot_log(-50.0)) == 0.0
    power = np.where(np.arange(1000) % 2 == 0, 200.0, -200.0)
    assert cost_of_transport(cot_log(power)) == pytest.approx(0.4247, abs=1e-4)


def test_cot_needs_distance():
    with pytest.raises(DegenerateDistance):
        cost_of_transport(RolloutLog(blank(10)))


def test_single_cell_sweep_matches_rollout(tmp_path):
    runner = EpisodeRunner(episode_len=3000)
    rows = velocity_sweep(warm_start("slope"), [Terrain()], [0.2], trials=1, seed=7, runner=runner)
    res = runner.run(warm_start("slope"), EpisodeSetup(Terrain(), (0.0,), (CommandState(0.2),)),
                     seed=7)
    assert rows == [("flat", 0.2, res.distance, float(res.ticks_survived))]
    write_sweep_csv(rows, tmp_path / "a.csv")
    write_sweep_csv(velocity_sweep(warm_start("slope"), [Terrain()], [0.2], seed=7, runner=runner),
                    tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_sweep_rejects_empty_velocities():
    with pytest.raises(ValueError):
        velocity_sweep(warm_start("slope"), [Terrain()], [])


def test_push_zero_recovers():
    recovered, report = push_test(warm_start("slope"), 0.0, "lateral", t_apply=1.0)
    assert recovered and report.recovered and report.termination_cause == "max_len"


def test_huge_push_fails():
    recovered, report = push_test(warm_start("slope"), 300.0, "lateral", t_apply=1.0)
    assert not recovered and report.termination_cause in ("topple", "height")


def test_lateral_push_on_walking_policy():
    recovered, _ = push_test(warm_start("slope"), 5.0, "lateral", t_apply=2.0)
    assert recovered


def test_push_time_must_lie_in_episode():
    with pytest.raises(ValueError):
        push_test(warm_start("slope"), 1.0, t_apply=100.0)
