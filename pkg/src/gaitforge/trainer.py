"""Augmented Random Search over the masked policy subspace."""

from __future__ import annotations

import csv
import functools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gait import GaitParams
from .physics import PhysicsParams
from .policy import (MAX_VX, MAX_VY, N_ACT, N_OBS, TASKS, CommandState, PolicyMatrix,
                     heuristic_mask, save_policy, warm_start)
from .robot_model import RobotModel
from .rollout import EpisodeResult, EpisodeRunner, EpisodeSetup, RewardWeights
from .terrain import Terrain

SLOPES_DEG = (-13.0, -11.0, -7.0, 0.0, 7.0, 11.0, 13.0)
STAIRS = ((0.3, 0.05), (0.4, 0.085), (0.5, 0.1))
TRAIN_LOG_COLUMNS = ("iteration", "reward_mean", "reward_max", "sigma_R", "distance_mean")
SIGMA_FLOOR = 1e-6


class NumericalAbort(RuntimeError):
    def __init__(self, record: dict):
        super().__init__(", ".join(f"{k}={v}" for k, v in record.items()))
        self.record = record


@dataclass(frozen=True)
class TrainConfig:
    task: str = "slope"
    iterations: int = 100
    step_size: float = 0.03
    noise: float = 0.04
    n_directions: int = 8
    top_b: int = 4
    episode_len: int = 15000
    seed: int = 0
    slopes_deg: tuple = SLOPES_DEG
    stairs: tuple = STAIRS
    target_velocity: float = 0.2
    command_period: float = 3.0
    max_dvx: float = 0.2
    max_dvy: float = 0.1
    max_dyaw_deg: float = 2.5
    weights: RewardWeights = RewardWeights()
    topple: float = 0.6
    height_fraction: float = 0.6
    checkpoint_every: int = 10
    workers: int = 1
    mask: tuple | None = None       # 5x12 nested tuple of bools overriding the task mask
    friction: float = 0.8
    model: RobotModel = RobotModel()
    physics: PhysicsParams = PhysicsParams()
    gait: GaitParams = GaitParams()

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not 0 < self.top_b <= self.n_directions:
            raise ValueError("need 0 < top_b <= n_directions")
        if self.step_size <= 0 or self.noise <= 0:
            raise ValueError("step_size and noise must be positive")
        if self.iterations < 0 or self.episode_len < 1 or self.checkpoint_every < 1:
            raise ValueError("iterations >= 0, episode_len >= 1, checkpoint_every >= 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.topple <= 0 or not 0 < self.height_fraction < 1:
            raise ValueError("topple > 0 and 0 < height_fraction < 1 required")
        if not self.slopes_deg or not self.stairs:
            raise ValueError("terrain curriculum sets must be nonempty")
        if min(self.max_dvx, self.max_dvy, self.max_dyaw_deg, self.command_period) < 0:
            raise ValueError("command caps must be nonnegative")
        if self.mask is not None and np.shape(self.mask) != (N_ACT, N_OBS):
            raise ValueError("mask override must be 5x12")

    def policy_mask(self) -> np.ndarray:
        if self.mask is None:
            return heuristic_mask(self.task)
        return np.array(self.mask, dtype=bool)

    def runner(self) -> EpisodeRunner:
        return EpisodeRunner(self.model, self.physics, self.gait, self.weights,
                             episode_len=self.episode_len, topple=self.topple,
                             height_fraction=self.height_fraction)


# ---------------------------------------------------------------------------
# rewards (the compiled episode loop evaluates the same expressions per tick)


def gaussian_kernel(x, w: float):
    return np.exp(-w * np.square(x))


def _stability(roll, pitch, e_yaw, e_pz, weights: RewardWeights):
    return (gaussian_kernel(roll, weights.roll) + gaussian_kernel(pitch, weights.pitch)
            + gaussian_kernel(e_yaw, weights.yaw) + gaussian_kernel(e_pz, weights.height))


def reward_terrain(roll, pitch, e_yaw, e_pz, dx, weights: RewardWeights = RewardWeights()):
    """Four torso kernels plus the progress term W*dx."""
    return _stability(roll, pitch, e_yaw, e_pz, weights) + weights.progress * dx


def reward_command(roll, pitch, e_yaw, e_pz, e_v, weights: RewardWeights = RewardWeights()):
    """Four torso kernels plus a kernel on the heading-frame velocity error.

    ``e_v`` is either the error norm or an (e_vx, e_vy) pair."""
    e_v = np.asarray(e_v, dtype=float)
    norm = np.sqrt(np.sum(np.square(e_v), axis=-1)) if e_v.ndim else np.abs(e_v)
    return _stability(roll, pitch, e_yaw, e_pz, weights) + gaussian_kernel(norm, weights.velocity)


# ---------------------------------------------------------------------------
# curricula and rollouts


def sample_episode_setup(config: TrainConfig, rng: np.random.Generator) -> EpisodeSetup:
    if config.task == "slope":
        deg = config.slopes_deg[rng.integers(len(config.slopes_deg))]
        terrain = Terrain("slope", alpha=math.radians(deg),
                          friction_coefficient=config.friction)
        return EpisodeSetup(terrain, (0.0,), (CommandState(config.target_velocity, 0.0, 0.0),))
    if config.task == "stair":
        length, height = config.stairs[rng.integers(len(config.stairs))]
        terrain = Terrain("stairs", step_length=length, step_height=height,
                          friction_coefficient=config.friction)
        return EpisodeSetup(terrain, (0.0,), (CommandState(config.target_velocity, 0.0, 0.0),))
    duration = config.episode_len * config.physics.dt
    vx, vy, yaw = config.target_velocity, 0.0, 0.0
    times = [0.0]
    commands = [CommandState.clamped(vx, vy, yaw)]
    dyaw = math.radians(config.max_dyaw_deg)
    t = config.command_period
    while config.command_period > 0 and t < duration - 1e-9:
        vx = float(np.clip(vx + rng.uniform(-config.max_dvx, config.max_dvx), -MAX_VX, MAX_VX))
        vy = float(np.clip(vy + rng.uniform(-config.max_dvy, config.max_dvy), -MAX_VY, MAX_VY))
        yaw += rng.uniform(-dyaw, dyaw)
        times.append(t)
        commands.append(CommandState(vx, vy, yaw))
        t += config.command_period
    return EpisodeSetup(Terrain("flat", friction_coefficient=config.friction), tuple(times),
                        tuple(commands))


@functools.lru_cache(maxsize=4)
def _runner(config: TrainConfig) -> EpisodeRunner:
    return config.runner()


def rollout(policy: PolicyMatrix, config: TrainConfig, setup: EpisodeSetup,
            seed: int = 0) -> EpisodeResult:
    return _runner(config).run(policy, setup, seed=seed)


def episode_seed(config: TrainConfig, iteration: int, direction: int) -> np.random.SeedSequence:
    """Counter-based stream for one (iteration, direction) pair; both signs share it."""
    return np.random.SeedSequence(config.seed, spawn_key=(iteration, direction))


def direction_setup(config: TrainConfig, iteration: int, direction: int):
    rng = np.random.default_rng(episode_seed(config, iteration, direction))
    setup = sample_episode_setup(config, rng)
    return setup, int(rng.integers(2 ** 32))


def sample_directions(mask, n: int, rng: np.random.Generator) -> np.ndarray:
    """n direction matrices with standard normal entries at unmasked positions only."""
    mask = np.asarray(mask, dtype=bool)
    deltas = np.zeros((n,) + mask.shape)
    deltas[:, mask] = rng.standard_normal((n, int(mask.sum())))
    return deltas


def _rollout_job(args):
    config, values, mask, task, setup, seed = args
    res = rollout(PolicyMatrix(values, mask, task), config, setup, seed)
    return res.total_reward, res.distance


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    reward_mean: float
    reward_max: float
    sigma_R: float
    distance_mean: float

    def row(self) -> list:
        return [str(self.iteration)] + [repr(float(getattr(self, c)))
                                         for c in TRAIN_LOG_COLUMNS[1:]]


def ars_step(values, deltas, r_plus, r_minus, step_size: float, top_b: int):
    """One V1-t update; returns (new values, sigma_R, selected direction indices)."""
    r_plus = np.asarray(r_plus, dtype=float)
    r_minus = np.asarray(r_minus, dtype=float)
    # stable sort keeps the direction order fixed on ties
    order = np.argsort(-np.maximum(r_plus, r_minus), kind="stable")[:top_b]
    sigma = max(float(np.std(np.concatenate([r_plus[order], r_minus[order]]))), SIGMA_FLOOR)
    step = np.zeros_like(values)
    for i in sorted(order):
        step += (r_plus[i] - r_minus[i]) * deltas[i]
    return values + step_size / (top_b * sigma) * step, sigma, order


def ars_update(policy: PolicyMatrix, config: TrainConfig, iteration: int, evaluate=None,
               pool=None) -> tuple:
    """One ARS iteration from ``policy``.

    ``evaluate(values, iteration, direction)`` -> (reward, distance) replaces the
    rollout when given (used for synthetic objectives). Returns
    (PolicyMatrix, IterationStats)."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(iteration,)))
    deltas = sample_directions(policy.mask, config.n_directions, rng)
    candidates = []
    for i in range(config.n_directions):
        for sign in (1.0, -1.0):
            candidates.append(np.where(policy.mask, policy.values + sign * config.noise
                                       * deltas[i], 0.0))
    if evaluate is not None:
        out = [evaluate(c, iteration, k // 2) for k, c in enumerate(candidates)]
    else:
        jobs = []
        for k, c in enumerate(candidates):
            setup, seed = direction_setup(config, iteration, k // 2)
            jobs.append((config, c, policy.mask, policy.task, setup, seed))
        out = list((pool.map if pool is not None else map)(_rollout_job, jobs))
    rewards = np.array([float(r) for r, _ in out])
    distances = np.array([float(d) for _, d in out])
    if not np.all(np.isfinite(rewards)):
        k = int(np.flatnonzero(~np.isfinite(rewards))[0])
        raise NumericalAbort({"iteration": iteration, "direction": k // 2,
                              "sign": "+" if k % 2 == 0 else "-", "reward": rewards[k]})
    values, sigma, _ = ars_step(policy.values, deltas, rewards[0::2], rewards[1::2],
                                config.step_size, config.top_b)
    if not np.all(np.isfinite(values)):
        raise NumericalAbort({"iteration": iteration, "reason": "non-finite policy update"})
    stats = IterationStats(iteration, float(rewards.mean()), float(rewards.max()), sigma,
                           float(distances.mean()))
    return policy.with_values(values), stats


class QuadraticSurrogate:
    """r(M) = -||(M - M*) * mask||^2, a stand-in for rollouts with a known optimum."""

    def __init__(self, optimum, mask):
        self.mask = np.asarray(mask, dtype=bool)
        self.optimum = np.where(self.mask, np.asarray(optimum, dtype=float), 0.0)

    def __call__(self, values, iteration=0, direction=0):
        e = (np.asarray(values) - self.optimum) * self.mask
        return -float(np.sum(e * e)), 0.0


@dataclass
class TrainResult:
    policy: PolicyMatrix
    curve: list = field(default_factory=list)


def write_train_log(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAIN_LOG_COLUMNS)
        for s in curve:
            w.writerow(s.row())


def train(config: TrainConfig, out_dir=None, evaluate=None, initial: PolicyMatrix | None = None,
          progress=None) -> TrainResult:
    """Run ``config.iterations`` ARS updates from the warm start.

    With ``out_dir`` the policy is checkpointed every ``checkpoint_every``
    iterations, and the training log goes to train_log.csv. Wall-clock timings
    go to train_timing.csv so the other artifacts stay byte-reproducible."""
    policy = initial if initial is not None else warm_start(config.task, config.policy_mask())
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        save_policy(policy, out / "checkpoints" / "policy_0000.txt")
    result = TrainResult(policy)
    timings = []
    pool = None
    if evaluate is None and config.workers > 1 and config.iterations > 0:
        pool = ProcessPoolExecutor(max_workers=config.workers)
    try:
        for it in range(1, config.iterations + 1):
            t0 = time.perf_counter()
            try:
                policy, stats = ars_update(policy, config, it, evaluate=evaluate, pool=pool)
            except NumericalAbort as exc:
                if out is not None:
                    (out / "abort.txt").write_text(
                        "".join(f"{k} = {v}\n" for k, v in exc.record.items()))
                    write_train_log(out / "train_log.csv", result.curve)
                raise
            result.policy = policy
            result.curve.append(stats)
            timings.append((it, time.perf_counter() - t0))
            if out is not None and it % config.checkpoint_every == 0:
                save_policy(policy, out / "checkpoints" / f"policy_{it:04d}.txt")
            if progress is not None:
                progress(stats)
    finally:
        if pool is not None:
            pool.shutdown()
    if out is not None:
        save_policy(result.policy, out / "policy.txt")
        write_train_log(out / "train_log.csv", result.curve)
        with open(out / "train_timing.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("iteration", "wall_time_s"))
            w.writerows((i, f"{s:.3f}") for i, s in timings)
    return result
