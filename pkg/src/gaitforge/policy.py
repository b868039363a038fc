"""Sparse linear policy over a 12-dimensional observation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .gait import ACTION_HIGH, ACTION_LOW, Action, GaitState
from .robot_model import euler_rates, euler_zyx, quat_to_rot

OBS_NAMES = ("roll", "pitch", "e_yaw", "roll_rate", "pitch_rate", "yaw_rate", "plane_roll",
             "plane_pitch", "e_vx", "e_vy", "e_vz", "vx_cmd")
(O_ROLL, O_PITCH, O_EYAW, O_ROLL_RATE, O_PITCH_RATE, O_YAW_RATE, O_GAMMA, O_ALPHA, O_EVX,
 O_EVY, O_EVZ, O_VXD) = range(12)
(A_LEN, A_YAW, A_X, A_Y, A_Z) = range(5)
N_OBS = 12
N_ACT = 5
TASKS = ("slope", "command", "stair")

# observation components that flip sign under left/right mirroring
LATERAL_OBS = (O_ROLL, O_ROLL_RATE, O_GAMMA, O_EVY)

MAX_VX = 0.6
MAX_VY = 0.3


class MaskViolation(ValueError):
    pass


class CorruptPolicy(ValueError):
    pass


@dataclass(frozen=True)
class CommandState:
    vx: float = 0.0
    vy: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if abs(self.vx) > MAX_VX + 1e-12 or abs(self.vy) > MAX_VY + 1e-12:
            raise ValueError("command exceeds |vx| <= 0.6, |vy| <= 0.3")

    @classmethod
    def clamped(cls, vx: float, vy: float, yaw: float) -> "CommandState":
        return cls(float(np.clip(vx, -MAX_VX, MAX_VX)), float(np.clip(vy, -MAX_VY, MAX_VY)),
                   float(yaw))


@njit(cache=True)
def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    r = a - 2.0 * math.pi * math.floor((a + math.pi) / (2.0 * math.pi))
    return math.pi if r <= -math.pi else r


@njit(cache=True)
def observation_kernel(q, v, gamma, alpha, vx_d, vy_d, yaw_d, out):
    rot = quat_to_rot(q[3:7])
    roll, pitch, yaw = euler_zyx(rot)
    rr, pr, yr = euler_rates(roll, pitch, v[:3])
    vw = rot @ v[3:6]
    c = math.cos(yaw)
    s = math.sin(yaw)
    out[O_ROLL] = roll
    out[O_PITCH] = pitch
    out[O_EYAW] = wrap_angle(yaw_d - yaw)
    out[O_ROLL_RATE] = rr
    out[O_PITCH_RATE] = pr
    out[O_YAW_RATE] = yr
    out[O_GAMMA] = gamma
    out[O_ALPHA] = alpha
    out[O_EVX] = vx_d - (c * vw[0] + s * vw[1])
    out[O_EVY] = vy_d - (-s * vw[0] + c * vw[1])
    out[O_EVZ] = 0.0 - vw[2]
    out[O_VXD] = vx_d


def build_observation(sim_state, gait_state: GaitState, command: CommandState) -> np.ndarray:
    out = np.empty(N_OBS)
    plane = gait_state.latched_plane
    observation_kernel(sim_state.q, sim_state.v, plane.roll, plane.pitch, command.vx,
                       command.vy, command.yaw, out)
    return out


def heuristic_mask(task: str) -> np.ndarray:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    mask = np.zeros((N_ACT, N_OBS), dtype=bool)
    core = [(A_LEN, O_PITCH), (A_X, O_EVX), (A_Z, O_EVZ), (A_Y, O_ROLL), (A_Y, O_EVY),
            (A_YAW, O_EYAW)]
    plane = [(A_X, O_GAMMA), (A_X, O_ALPHA), (A_Z, O_GAMMA), (A_Z, O_ALPHA)]
    extra = [(A_LEN, O_VXD)] if task == "command" else [(A_LEN, O_EVX)]
    if task == "stair":
        extra.append((A_Z, O_EVX))
    for i, j in core + plane + extra:
        mask[i, j] = True
    return mask


class PolicyMatrix:
    """5x12 gain matrix with a sparsity mask; masked entries are always zero."""

    def __init__(self, values, mask, task: str = "slope"):
        values = np.array(values, dtype=float)
        mask = np.array(mask, dtype=bool)
        if values.shape != (N_ACT, N_OBS) or mask.shape != (N_ACT, N_OBS):
            raise ValueError("policy values and mask must be 5x12")
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        if np.any(values[~mask] != 0.0):
            raise MaskViolation("nonzero value at a masked position")
        if not np.all(np.isfinite(values)):
            raise ValueError("policy values must be finite")
        values.setflags(write=False)
        mask.setflags(write=False)
        self.values = values
        self.mask = mask
        self.task = task

    @classmethod
    def zeros(cls, task: str, mask=None) -> "PolicyMatrix":
        mask = heuristic_mask(task) if mask is None else mask
        return cls(np.zeros((N_ACT, N_OBS)), mask, task)

    def with_values(self, values) -> "PolicyMatrix":
        """Copy with new values; masked positions are forced to exactly zero."""
        values = np.where(self.mask, np.asarray(values, dtype=float), 0.0)
        return PolicyMatrix(values, self.mask, self.task)

    @property
    def free(self) -> np.ndarray:
        return self.values[self.mask]

    def __eq__(self, other):
        return (isinstance(other, PolicyMatrix) and self.task == other.task
                and np.array_equal(self.mask, other.mask)
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"PolicyMatrix(task={self.task!r}, free={self.free.tolist()})"


def evaluate(policy: PolicyMatrix, s) -> Action:
    raw = policy.values @ np.asarray(s, dtype=float)
    return Action.from_array(np.clip(raw, ACTION_LOW, ACTION_HIGH))


# hand-tuned stabilizing gains, (row, column) -> value
WARM_START_GAINS = {
    (A_LEN, O_PITCH): -0.3,
    (A_X, O_EVX): -0.3,
    (A_Z, O_EVZ): 0.0,
    (A_Y, O_ROLL): 0.0,
    (A_Y, O_EVY): -0.25,
    (A_YAW, O_EYAW): 0.5,
    (A_LEN, O_EVX): -0.3,
    (A_X, O_ALPHA): -0.3,
}


def warm_start(task: str, mask=None, gains=None) -> PolicyMatrix:
    mask = heuristic_mask(task) if mask is None else np.asarray(mask, dtype=bool)
    values = np.zeros((N_ACT, N_OBS))
    for (i, j), g in (WARM_START_GAINS if gains is None else gains).items():
        if mask[i, j]:
            values[i, j] = g
    return PolicyMatrix(values, mask, task)


# ---------------------------------------------------------------------------
# file format


def save_policy(policy: PolicyMatrix, path) -> None:
    lines = [f"gaitpolicy v1 {policy.task}", f"rows {N_ACT} cols {N_OBS}"]
    lines += [" ".join("1" if b else "0" for b in row) for row in policy.mask]
    lines += [" ".join(f"{x:.17e}" for x in row) for row in policy.values]
    Path(path).write_text("\n".join(lines) + "\n")


def load_policy(path) -> PolicyMatrix:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) != 2 + 2 * N_ACT:
        raise CorruptPolicy(f"{path}: expected {2 + 2 * N_ACT} lines, got {len(lines)}")
    head = lines[0].split()
    if len(head) != 3 or head[:2] != ["gaitpolicy", "v1"] or head[2] not in TASKS:
        raise CorruptPolicy(f"{path}: bad header {lines[0]!r}")
    if lines[1].split() != ["rows", str(N_ACT), "cols", str(N_OBS)]:
        raise CorruptPolicy(f"{path}: bad shape line {lines[1]!r}")
    try:
        mask = [[{"0": False, "1": True}[b] for b in ln.split()] for ln in lines[2:2 + N_ACT]]
        values = [[float(x) for x in ln.split()] for ln in lines[2 + N_ACT:]]
        return PolicyMatrix(values, mask, head[2])
    except MaskViolation as exc:
        raise CorruptPolicy(f"{path}: {exc}") from None
    except (KeyError, ValueError) as exc:
        raise CorruptPolicy(f"{path}: malformed matrix ({exc})") from None
