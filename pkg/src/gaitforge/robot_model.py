"""Digit-lite biped: structure, kinematics and support-plane estimation.

Kinematic tree (both legs identical up to the sign of the lateral hip
offset)::

    torso -> hip_roll (x) -> hip_yaw (z) -> hip_pitch (y) -> knee (y)
          -> ankle_pitch (y) -> ankle_roll (x) -> foot sole center

All joint frames are aligned with the torso frame at zero configuration, so
the straight-leg pose puts the sole directly below the hip at a depth of
``thigh + shank + ankle_height``.

Euler angles everywhere use the intrinsic Z-Y-X convention,
``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from functools import lru_cache
from pathlib import Path

import numpy as np
from numba import njit

LEFT, RIGHT = 0, 1
LEG_NAMES = ("L", "R")
LEG_JOINTS = ("hip_roll", "hip_yaw", "hip_pitch", "knee", "ankle_pitch", "ankle_roll")
JOINT_NAMES = tuple(f"{leg}_{j}" for leg in LEG_NAMES for j in LEG_JOINTS)
N_JOINTS = 12
N_BODIES = 13
FOOT_BODIES = (6, 12)
# joint axis per leg joint: 0 = x, 1 = y, 2 = z
LEG_AXES = (0, 2, 1, 1, 1, 0)
FRAMES = ("foot_L", "foot_R", "com")


class Unreachable(ValueError):
    """Foot target lies outside the leg's reachable annulus or joint limits."""

    def __init__(self, target, reason=""):
        self.target = np.asarray(target, dtype=float)
        super().__init__(f"unreachable foot target {self.target.tolist()} {reason}".strip())


class NotARotation(ValueError):
    pass


def _default_limits():
    left = ((-0.35, 0.5), (-0.5, 0.5), (-1.5, 0.9), (0.0, 2.3), (-0.9, 0.9), (-0.5, 0.5))
    right = tuple((-hi, -lo) if j in (0, 1, 5) else (lo, hi)
                  for j, (lo, hi) in enumerate(left))
    return left + right


@dataclass(frozen=True)
class RobotModel:
    """Kinematic and inertial description of the biped.

    Link tuples (``link_masses``, ``link_coms``, ``link_inertias``) are given
    per leg in joint order; both legs share them with the CoM's y-coordinate
    mirrored for the right leg. Inertias are principal moments about the
    link CoM in the link frame.
    """

    total_mass: float = 48.0
    torso_mass: float = 22.0
    leg_mass_per_leg: float = 13.0
    hip_width: float = 0.3
    thigh_length: float = 0.4
    shank_length: float = 0.4
    foot_half_length: float = 0.08
    foot_half_width: float = 0.04
    ankle_height: float = 0.05
    torso_com: tuple = (0.0, 0.0, 0.15)
    torso_inertia: tuple = (0.596, 0.486, 0.339)
    link_masses: tuple = (1.5, 1.5, 5.5, 3.0, 0.3, 1.2)
    link_coms: tuple = ((0.0, 0.0, 0.0), (0.0, 0.0, -0.02), (0.0, 0.0, -0.17),
                        (0.0, 0.0, -0.18), (0.0, 0.0, 0.0), (0.0, 0.0, -0.03))
    link_inertias: tuple = ((0.004, 0.004, 0.004), (0.006, 0.006, 0.004),
                            (0.075, 0.075, 0.012), (0.042, 0.042, 0.004),
                            (2e-4, 2e-4, 2e-4), (9e-4, 2.8e-3, 3.2e-3))
    joint_limits: tuple = field(default_factory=_default_limits)
    torque_limits: tuple = (200.0, 120.0, 200.0, 300.0, 60.0, 60.0) * 2
    # reflected rotor inertia per joint (kg m^2)
    joint_armature: tuple = (0.02, 0.02, 0.02, 0.02, 0.01, 0.01) * 2
    ankle_roll_offset: float = 0.366
    ankle_pitch_offset: float = 0.065

    def __post_init__(self):
        for name in ("hip_width", "thigh_length", "shank_length", "foot_half_length",
                     "foot_half_width", "ankle_height"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if abs(self.torso_mass + 2 * self.leg_mass_per_leg - self.total_mass) > 1e-9:
            raise ValueError("torso_mass + 2*leg_mass_per_leg must equal total_mass")
        if abs(sum(self.link_masses) - self.leg_mass_per_leg) > 1e-9:
            raise ValueError("link_masses must sum to leg_mass_per_leg")
        if len(self.joint_limits) != N_JOINTS or len(self.torque_limits) != N_JOINTS:
            raise ValueError("joint_limits and torque_limits need 12 entries")
        for name, (lo, hi) in zip(JOINT_NAMES, self.joint_limits):
            if not lo < hi:
                raise ValueError(f"joint limit for {name} must satisfy min < max")
        if any(t <= 0 for t in self.torque_limits):
            raise ValueError("torque limits must be positive")
        if len(self.joint_armature) != N_JOINTS or any(a < 0 for a in self.joint_armature):
            raise ValueError("joint_armature needs 12 nonnegative entries")

    @property
    def leg_length(self) -> float:
        return self.thigh_length + self.shank_length + self.ankle_height

    def limits_array(self) -> np.ndarray:
        return np.array(self.joint_limits, dtype=float)

    def hip_offset(self, leg: int) -> np.ndarray:
        return np.array([0.0, 0.5 * self.hip_width if leg == LEFT else -0.5 * self.hip_width, 0.0])

    def arrays(self) -> "ModelArrays":
        return _model_arrays(self)


# ---------------------------------------------------------------------------
# config file io: one ``key = value`` per line, keys are the field names


def _format_value(value) -> str:
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(":".join(repr(float(x)) for x in item) for item in value)
        return ", ".join(repr(float(x)) for x in value)
    return repr(float(value))


def _parse_value(template, text: str):
    if isinstance(template, tuple):
        items = [s.strip() for s in text.split(",") if s.strip()]
        if template and isinstance(template[0], tuple):
            return tuple(tuple(float(x) for x in item.split(":")) for item in items)
        return tuple(float(x) for x in items)
    return float(text)


def model_from_mapping(values: dict) -> RobotModel:
    defaults = RobotModel()
    names = {f.name for f in fields(RobotModel)}
    unknown = set(values) - names
    if unknown:
        raise KeyError(f"unknown robot model keys: {sorted(unknown)}")
    kwargs = {k: _parse_value(getattr(defaults, k), str(v)) for k, v in values.items()}
    return RobotModel(**kwargs)


def load_model(path) -> RobotModel:
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string("[robot]\n" + text)
    return model_from_mapping(dict(parser["robot"]))


def save_model(model: RobotModel, path) -> None:
    lines = [f"{f.name} = {_format_value(getattr(model, f.name))}" for f in fields(RobotModel)]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# packed arrays for the compiled kernels


@dataclass(frozen=True)
class ModelArrays:
    parent: np.ndarray      # (13,) int
    axis: np.ndarray        # (13,) int, -1 for the base
    tree_r: np.ndarray      # (13, 3) joint origin in parent frame
    mass: np.ndarray        # (13,)
    com: np.ndarray         # (13, 3)
    inertia6: np.ndarray    # (13, 6, 6) spatial inertia at body origin
    corners: np.ndarray     # (4, 3) contact points in foot frame
    limits: np.ndarray      # (12, 2)
    torque_limits: np.ndarray  # (12,)
    armature: np.ndarray    # (12,)
    geom: np.ndarray        # hip_width, thigh, shank, ankle_height, half_len, half_width

    @classmethod
    def from_model(cls, m: RobotModel) -> "ModelArrays":
        parent = np.full(N_BODIES, -1, dtype=np.int64)
        axis = np.full(N_BODIES, -1, dtype=np.int64)
        tree_r = np.zeros((N_BODIES, 3))
        mass = np.zeros(N_BODIES)
        com = np.zeros((N_BODIES, 3))
        inertia = np.zeros((N_BODIES, 3))
        mass[0] = m.torso_mass
        com[0] = m.torso_com
        inertia[0] = m.torso_inertia
        for leg in (LEFT, RIGHT):
            side = 1.0 if leg == LEFT else -1.0
            for j in range(6):
                b = 1 + 6 * leg + j
                parent[b] = 0 if j == 0 else b - 1
                axis[b] = LEG_AXES[j]
                mass[b] = m.link_masses[j]
                c = np.array(m.link_coms[j], dtype=float)
                c[1] *= side
                com[b] = c
                inertia[b] = m.link_inertias[j]
            tree_r[1 + 6 * leg] = m.hip_offset(leg)
            tree_r[4 + 6 * leg] = (0.0, 0.0, -m.thigh_length)
            tree_r[5 + 6 * leg] = (0.0, 0.0, -m.shank_length)
        inertia6 = np.zeros((N_BODIES, 6, 6))
        for b in range(N_BODIES):
            inertia6[b] = spatial_inertia(mass[b], com[b], np.diag(inertia[b]))
        hl, hw, ah = m.foot_half_length, m.foot_half_width, m.ankle_height
        corners = np.array([[hl, hw, -ah], [hl, -hw, -ah], [-hl, hw, -ah], [-hl, -hw, -ah]])
        geom = np.array([m.hip_width, m.thigh_length, m.shank_length, ah, hl, hw])
        return cls(parent, axis, tree_r, mass, com, inertia6, corners, m.limits_array(),
                   np.array(m.torque_limits, dtype=float),
                   np.array(m.joint_armature, dtype=float), geom)


@lru_cache(maxsize=32)
def _model_arrays(model: RobotModel) -> ModelArrays:
    return ModelArrays.from_model(model)


def skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def spatial_inertia(mass: float, com, inertia_com) -> np.ndarray:
    """6x6 spatial inertia (angular-first ordering) about the body origin."""
    cx = skew(com)
    out = np.zeros((6, 6))
    out[:3, :3] = inertia_com + mass * cx @ cx.T
    out[:3, 3:] = mass * cx
    out[3:, :3] = mass * cx.T
    out[3:, 3:] = mass * np.eye(3)
    return out


# ---------------------------------------------------------------------------
# rotations


@njit(cache=True)
def axis_rotation(axis, angle):
    c = math.cos(angle)
    s = math.sin(angle)
    r = np.zeros((3, 3))
    if axis == 0:
        r[0, 0] = 1.0
        r[1, 1] = c
        r[1, 2] = -s
        r[2, 1] = s
        r[2, 2] = c
    elif axis == 1:
        r[1, 1] = 1.0
        r[0, 0] = c
        r[0, 2] = s
        r[2, 0] = -s
        r[2, 2] = c
    else:
        r[2, 2] = 1.0
        r[0, 0] = c
        r[0, 1] = -s
        r[1, 0] = s
        r[1, 1] = c
    return r


@njit(cache=True)
def rot_zyx(roll, pitch, yaw):
    """``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    return axis_rotation(2, yaw) @ (axis_rotation(1, pitch) @ axis_rotation(0, roll))


@njit(cache=True)
def euler_zyx(r):
    """Inverse of :func:`rot_zyx`; returns (roll, pitch, yaw)."""
    pitch = math.atan2(-r[2, 0], math.sqrt(r[0, 0] * r[0, 0] + r[1, 0] * r[1, 0]))
    roll = math.atan2(r[2, 1], r[2, 2])
    yaw = math.atan2(r[1, 0], r[0, 0])
    return roll, pitch, yaw


def euler_to_rotation(roll: float, pitch: float, yaw: float) -> np.ndarray:
    return rot_zyx(float(roll), float(pitch), float(yaw))


def rotation_to_euler(r) -> tuple:
    return euler_zyx(np.ascontiguousarray(r, dtype=float))


@njit(cache=True)
def quat_to_rot(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    r = np.empty((3, 3))
    r[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    r[0, 1] = 2.0 * (x * y - w * z)
    r[0, 2] = 2.0 * (x * z + w * y)
    r[1, 0] = 2.0 * (x * y + w * z)
    r[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    r[1, 2] = 2.0 * (y * z - w * x)
    r[2, 0] = 2.0 * (x * z - w * y)
    r[2, 1] = 2.0 * (y * z + w * x)
    r[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return r


@njit(cache=True)
def rot_to_quat(r):
    q = np.empty(4)
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q[0] = 0.25 * s
        q[1] = (r[2, 1] - r[1, 2]) / s
        q[2] = (r[0, 2] - r[2, 0]) / s
        q[3] = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q[0] = (r[2, 1] - r[1, 2]) / s
        q[1] = 0.25 * s
        q[2] = (r[0, 1] + r[1, 0]) / s
        q[3] = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q[0] = (r[0, 2] - r[2, 0]) / s
        q[1] = (r[0, 1] + r[1, 0]) / s
        q[2] = 0.25 * s
        q[3] = (r[1, 2] + r[2, 1]) / s
    else:
        s = 2.0 * math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q[0] = (r[1, 0] - r[0, 1]) / s
        q[1] = (r[0, 2] + r[2, 0]) / s
        q[2] = (r[1, 2] + r[2, 1]) / s
        q[3] = 0.25 * s
    if q[0] < 0.0:
        q *= -1.0
    return q


@njit(cache=True)
def euler_rates(roll, pitch, omega_body):
    """Z-Y-X Euler angle rates from the body-frame angular velocity."""
    cr = math.cos(roll)
    sr = math.sin(roll)
    cp = math.cos(pitch)
    yaw_rate = (omega_body[1] * sr + omega_body[2] * cr) / cp
    pitch_rate = omega_body[1] * cr - omega_body[2] * sr
    roll_rate = omega_body[0] + yaw_rate * math.sin(pitch)
    return roll_rate, pitch_rate, yaw_rate


@njit(cache=True)
def body_rates(roll, pitch, roll_rate, pitch_rate, yaw_rate):
    """Body-frame angular velocity from Z-Y-X Euler angle rates."""
    cr = math.cos(roll)
    sr = math.sin(roll)
    cp = math.cos(pitch)
    sp = math.sin(pitch)
    w = np.empty(3)
    w[0] = roll_rate - yaw_rate * sp
    w[1] = pitch_rate * cr + yaw_rate * sr * cp
    w[2] = -pitch_rate * sr + yaw_rate * cr * cp
    return w


# ---------------------------------------------------------------------------
# forward kinematics


@njit(cache=True)
def body_poses(parent, axis, tree_r, base_pos, base_rot, joints):
    """World rotation and position of every body frame."""
    n = parent.shape[0]
    rot = np.empty((n, 3, 3))
    pos = np.empty((n, 3))
    rot[0] = base_rot
    pos[0] = base_pos
    for b in range(1, n):
        p = parent[b]
        pos[b] = pos[p] + rot[p] @ tree_r[b]
        rot[b] = rot[p] @ axis_rotation(axis[b], joints[b - 1])
    return rot, pos


@dataclass(frozen=True)
class BasePose:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def rotation(self) -> np.ndarray:
        return euler_to_rotation(self.roll, self.pitch, self.yaw)


@dataclass(frozen=True)
class Transform:
    rotation: np.ndarray
    translation: np.ndarray

    def matrix(self) -> np.ndarray:
        t = np.eye(4)
        t[:3, :3] = self.rotation
        t[:3, 3] = self.translation
        return t


def forward_kinematics(model: RobotModel, base: BasePose, joints, frame: str) -> Transform:
    """World pose of ``foot_L``/``foot_R`` (sole center) or the whole-body ``com``.

    The ``com`` frame carries the base orientation.
    """
    if frame not in FRAMES:
        raise ValueError(f"frame must be one of {FRAMES}")
    joints = np.asarray(joints, dtype=float)
    if joints.shape != (N_JOINTS,) or not np.all(np.isfinite(joints)):
        raise ValueError("joints must be 12 finite values")
    arr = model.arrays()
    rot, pos = body_poses(arr.parent, arr.axis, arr.tree_r, base.position, base.rotation, joints)
    if frame == "com":
        com = sum(arr.mass[b] * (pos[b] + rot[b] @ arr.com[b]) for b in range(N_BODIES))
        return Transform(rot[0].copy(), com / arr.mass.sum())
    b = FOOT_BODIES[LEFT if frame == "foot_L" else RIGHT]
    sole = pos[b] + rot[b] @ np.array([0.0, 0.0, -model.ankle_height])
    return Transform(rot[b].copy(), sole)


# ---------------------------------------------------------------------------
# inverse kinematics


@njit(cache=True)
def leg_ik(hip_y, thigh, lower, px, py, pz, out, hip_yaw=0.0):
    """Analytic IK for one leg at a given hip yaw with the ankle joints at zero.

    ``(px, py, pz)`` is the sole target in the base frame and ``lower`` is
    shank plus ankle height. Writes (hip_roll, hip_pitch, knee) to ``out``
    and returns the virtual leg length.
    """
    dy = py - hip_y
    c = math.cos(hip_yaw)
    s = math.sin(hip_yaw)
    # leg vector in the yawed hip-pitch plane: (vx, 0, vz)
    vx = px / c
    a = s * vx
    rho2 = dy * dy + pz * pz - a * a
    vz = -math.sqrt(rho2) if rho2 > 0.0 else 0.0
    hip_roll = math.atan2(pz, dy) - math.atan2(vz, a)
    if hip_roll > math.pi:
        hip_roll -= 2.0 * math.pi
    elif hip_roll <= -math.pi:
        hip_roll += 2.0 * math.pi
    d = math.sqrt(vx * vx + vz * vz)
    ck = (d * d - thigh * thigh - lower * lower) / (2.0 * thigh * lower)
    if ck > 1.0:
        ck = 1.0
    elif ck < -1.0:
        ck = -1.0
    knee = math.acos(ck)
    # leg vector in the hip-pitch plane before and after the pitch rotation
    wx = -lower * math.sin(knee)
    wz = -thigh - lower * math.cos(knee)
    hip_pitch = math.atan2(wz, wx) - math.atan2(vz, vx)
    if hip_pitch > math.pi:
        hip_pitch -= 2.0 * math.pi
    elif hip_pitch <= -math.pi:
        hip_pitch += 2.0 * math.pi
    out[0] = hip_roll
    out[1] = hip_pitch
    out[2] = knee
    return d


MIN_VIRTUAL_LEG = 0.1


def inverse_kinematics(model: RobotModel, foot_target, leg) -> np.ndarray:
    """Leg joints (hip_roll, hip_yaw, hip_pitch, knee) placing the sole at ``foot_target``.

    The target is expressed in the base frame. Ankle joints are assumed at
    zero, so the ankle height extends the shank. Raises :class:`Unreachable`
    outside ``0.1 m < virtual length <= leg length`` or the joint limits.
    """
    leg = _leg_index(leg)
    target = np.asarray(foot_target, dtype=float)
    hip_y = model.hip_offset(leg)[1]
    out = np.empty(3)
    dy = target[1] - hip_y
    d = math.sqrt(target[0] ** 2 + dy ** 2 + target[2] ** 2)
    if not MIN_VIRTUAL_LEG < d <= model.leg_length * (1.0 + 1e-12):
        raise Unreachable(target, f"(virtual leg length {d:.4f} m)")
    if target[2] >= 0.0:
        raise Unreachable(target, "(foot must be below the hip)")
    leg_ik(hip_y, model.thigh_length, model.shank_length + model.ankle_height,
           target[0], target[1], target[2], out)
    q = np.array([out[0], 0.0, out[1], out[2]])
    lim = model.limits_array()[6 * leg: 6 * leg + 4]
    tol = 1e-12
    if np.any(q < lim[:, 0] - tol) or np.any(q > lim[:, 1] + tol):
        raise Unreachable(target, "(outside joint limits)")
    return q


def _leg_index(leg) -> int:
    if leg in (LEFT, "L", "l", "left"):
        return LEFT
    if leg in (RIGHT, "R", "r", "right"):
        return RIGHT
    raise ValueError(f"unknown leg {leg!r}")


# ---------------------------------------------------------------------------
# support plane


@dataclass(frozen=True)
class SupportPlane:
    roll: float = 0.0   # gamma
    pitch: float = 0.0  # alpha

    @property
    def gamma(self) -> float:
        return self.roll

    @property
    def alpha(self) -> float:
        return self.pitch


PLANE_LIMIT = math.pi / 3


@njit(cache=True)
def plane_from_rotation(r):
    roll, pitch, _ = euler_zyx(r)
    roll = min(max(roll, -PLANE_LIMIT), PLANE_LIMIT)
    pitch = min(max(pitch, -PLANE_LIMIT), PLANE_LIMIT)
    return roll, pitch


def estimate_support_plane(stance_foot_rotation_world) -> SupportPlane:
    r = np.ascontiguousarray(stance_foot_rotation_world, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise NotARotation("expected a finite 3x3 matrix")
    if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6 or np.linalg.det(r) < 0:
        raise NotARotation("matrix is not a proper rotation")
    roll, pitch = plane_from_rotation(r)
    return SupportPlane(roll, pitch)
