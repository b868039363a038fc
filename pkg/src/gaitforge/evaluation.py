"""Evaluation metrics, velocity sweeps, push tests and rollout logs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .policy import CommandState, PolicyMatrix
from .robot_model import RobotModel
from .rollout import (L_CMD, L_EPZ, L_QD, L_TAU, LOG_COLUMNS, EpisodeResult, EpisodeRunner,
                      EpisodeSetup, Push, RewardWeights)
from .terrain import Terrain

GRAVITY = 9.81
MIN_COT_DISTANCE = 0.05
PUSH_DURATION = 0.1
RECOVERY_TIME = 3.0
SWEEP_COLUMNS = ("terrain", "v_target", "mean_distance", "mean_ticks")


class EmptyLog(ValueError):
    pass


class DegenerateDistance(ValueError):
    pass


class RolloutLog:
    """Per-tick time series with the fixed ``LOG_COLUMNS`` schema."""

    columns = tuple(LOG_COLUMNS)

    def __init__(self, data):
        data = np.asarray(data, dtype=float).reshape(-1, len(self.columns))
        if data.shape[0] > 1 and np.any(np.diff(data[:, 0]) <= 0):
            raise ValueError("log time must be strictly increasing")
        self.data = data

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, name):
        return self.data[:, self.columns.index(name)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.data:
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path) -> "RolloutLog":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != cls.columns:
            raise ValueError(f"{path}: unexpected log header")
        return cls([[float(x) for x in r] for r in rows[1:]])


def torso_stability(log, weights: RewardWeights = RewardWeights()) -> float:
    """Mean over ticks of the four torso kernels (roll, pitch, yaw error, height error)."""
    if len(log) == 0:
        raise EmptyLog("torso_stability needs at least one tick")
    d = log.data
    e_yaw = np.angle(np.exp(1j * (d[:, L_CMD + 2] - d[:, 6])))
    g = (np.exp(-weights.roll * d[:, 4] ** 2) + np.exp(-weights.pitch * d[:, 5] ** 2)
         + np.exp(-weights.yaw * e_yaw ** 2) + np.exp(-weights.height * d[:, L_EPZ] ** 2))
    return float(np.mean(g))


def log_distance(log) -> float:
    """Displacement along the commanded heading, accumulated row to row."""
    d = log.data
    if len(log) < 2:
        return 0.0
    yaw_d = d[1:, L_CMD + 2]
    return float(np.sum(np.diff(d[:, 1]) * np.cos(yaw_d) + np.diff(d[:, 2]) * np.sin(yaw_d)))


def positive_work(log) -> float:
    d = log.data
    dt = np.diff(d[:, 0], prepend=0.0)
    power = np.clip(d[:, L_TAU:L_TAU + 12] * d[:, L_QD:L_QD + 12], 0.0, None)
    return float(np.sum(power.sum(axis=1) * dt))


def cost_of_transport(log, model: RobotModel = RobotModel(), distance: float | None = None,
                      work: float | None = None) -> float:
    """Positive mechanical work over m*g*distance.

    ``distance`` and ``work`` default to the values integrated from the log."""
    distance = log_distance(log) if distance is None else distance
    if distance <= MIN_COT_DISTANCE:
        raise DegenerateDistance(f"distance {distance:.4f} m is too short for a CoT")
    work = positive_work(log) if work is None else work
    return work / (model.total_mass * GRAVITY * distance)


@dataclass(frozen=True)
class MetricsReport:
    distance: float
    ticks_survived: int
    time_survived: float
    torso_stability: float
    cot: float
    mean_speed: float
    termination_cause: str
    recovered: bool | None = None

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            lines.append(f"{f.name} = {repr(v) if isinstance(v, float) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_result(cls, res: EpisodeResult, dt: float,
                    model: RobotModel = RobotModel()) -> "MetricsReport":
        ticks = max(res.ticks_survived, 1)
        t = res.ticks_survived * dt
        cot = (res.positive_work / (model.total_mass * GRAVITY * res.distance)
               if res.distance > MIN_COT_DISTANCE else math.inf)
        return cls(res.distance, res.ticks_survived, t, res.stability_sum / ticks, cot,
                   res.distance / t if t > 0 else 0.0, res.termination_cause)


def evaluate_policy(policy: PolicyMatrix, setup: EpisodeSetup, runner: EpisodeRunner,
                    seed: int = 0, ticks: int | None = None, log: bool = False):
    """(MetricsReport, RolloutLog or None) for one seeded episode."""
    res = runner.run(policy, setup, seed=seed, log=log, ticks=ticks)
    report = MetricsReport.from_result(res, runner.physics.dt, runner.model)
    return report, (RolloutLog(res.log) if log else None)


def velocity_sweep(policy: PolicyMatrix, terrains, v_targets, trials: int = 1, seed: int = 0,
                   runner: EpisodeRunner | None = None, ticks: int | None = None) -> list:
    """Rows of (terrain label, v_target, mean distance, mean ticks), ordered by the
    given terrain order and ascending velocity."""
    if len(v_targets) == 0:
        raise ValueError("v_targets must be nonempty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    runner = runner if runner is not None else EpisodeRunner()
    rows = []
    for terrain in terrains:
        for v in sorted(float(x) for x in v_targets):
            setup = EpisodeSetup(terrain, (0.0,), (CommandState(v, 0.0, 0.0),))
            results = [runner.run(policy, setup, seed=seed + k, ticks=ticks)
                       for k in range(trials)]
            rows.append((terrain.label(), v, float(np.mean([r.distance for r in results])),
                         float(np.mean([r.ticks_survived for r in results]))))
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for label, v, dist, ticks in rows:
            w.writerow([label, repr(v), repr(dist), repr(ticks)])


PUSH_DIRECTIONS = {"forward": 0.0, "lateral": 90.0, "backward": 180.0, "left": 90.0,
                   "right": -90.0}


def push_direction(direction) -> float:
    """Heading-frame push angle in degrees from a name or a number."""
    if isinstance(direction, str):
        if direction in PUSH_DIRECTIONS:
            return PUSH_DIRECTIONS[direction]
        return float(direction)
    return float(direction)


def push_setup(setup: EpisodeSetup, impulse: float, direction, t_apply: float) -> EpisodeSetup:
    """``setup`` with a 0.1 s rectangular pulse of the given impulse (N*s) added;
    the direction is relative to the initial commanded heading."""
    ang = math.radians(push_direction(direction)) + setup.commands[0].yaw
    f = impulse / PUSH_DURATION
    return replace(setup, push=Push((f * math.cos(ang), f * math.sin(ang), 0.0), t_apply,
                                    PUSH_DURATION))


def push_test(policy: PolicyMatrix, impulse: float, direction="lateral", t_apply: float = 2.0,
              seed: int = 0, runner: EpisodeRunner | None = None,
              terrain: Terrain = Terrain(), command: CommandState = CommandState(0.2, 0.0, 0.0)):
    """Apply impulse/0.1 s of force for 0.1 s to the torso at ``t_apply``.

    Recovered means no termination for 3 s after the pulse ends."""
    runner = runner if runner is not None else EpisodeRunner()
    dt = runner.physics.dt
    end = t_apply + PUSH_DURATION + RECOVERY_TIME
    if t_apply < 0 or t_apply >= runner.episode_len * dt:
        raise ValueError("t_apply must lie inside the episode")
    ticks = max(runner.episode_len, int(math.ceil(end / dt)))
    setup = push_setup(EpisodeSetup(terrain, (0.0,), (command,)), impulse, direction, t_apply)
    res = runner.run(policy, setup, seed=seed, ticks=ticks)
    recovered = res.ticks_survived * dt >= end - 1e-9
    report = replace(MetricsReport.from_result(res, dt, runner.model), recovered=recovered)
    return recovered, report
