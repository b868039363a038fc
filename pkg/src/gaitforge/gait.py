"""Low-level gait controller.

One leg swings along a semi-ellipse in its hip frame while the other stands.
The swing leg tracks IK joint targets with PD control and keeps its foot
aligned with the latched support plane; the stance leg regulates torso
attitude through the hip and leaves its ankle passive.

Torso regulation is written in the joint-axis convention of the original
hardware (mirrored right hip pitch, reversed hip roll). ``STANCE_ROLL_SIGN``
and the swing-foot sign map it onto this model's uniform axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .robot_model import (LEFT, N_JOINTS, RobotModel, SupportPlane,
                          _leg_index, axis_rotation, estimate_support_plane, euler_zyx,
                          leg_ik, quat_to_rot, rot_zyx, MIN_VIRTUAL_LEG)

ACTION_NAMES = ("step_length", "ellipse_yaw", "shift_x", "shift_y", "shift_z")
ACTION_LOW = np.array([-0.3, -0.3, -0.1, -0.1, -0.1])
ACTION_HIGH = -ACTION_LOW

# maps the hardware-convention hip roll torque onto this model's +x axis
STANCE_ROLL_SIGN = -1.0


def swing_sign(swing_leg: int) -> float:
    """S_f: -1 with the left leg in swing, +1 with the right."""
    return -1.0 if swing_leg == LEFT else 1.0


def mirror_sign(leg: int) -> float:
    return 1.0 if leg == LEFT else -1.0


@dataclass(frozen=True)
class Action:
    step_length: float = 0.0
    ellipse_yaw: float = 0.0
    shift_x: float = 0.0
    shift_y: float = 0.0
    shift_z: float = 0.0

    @classmethod
    def from_array(cls, a) -> "Action":
        return cls(*map(float, a))

    def as_array(self) -> np.ndarray:
        return np.array([self.step_length, self.ellipse_yaw, self.shift_x, self.shift_y,
                         self.shift_z])

    def clamped(self) -> "Action":
        return Action.from_array(np.clip(self.as_array(), ACTION_LOW, ACTION_HIGH))


@dataclass(frozen=True)
class GaitParams:
    swing_duration: float = 0.35
    clearance: float = 0.07
    foot_depth: float = -0.80
    contact_force_threshold: float = 30.0
    contact_debounce_ticks: int = 3
    min_phase_guard: float = 0.3
    # swing PD gains in leg joint order
    swing_kp: tuple = (1500.0, 300.0, 1500.0, 1500.0, 100.0, 100.0)
    swing_kd: tuple = (60.0, 10.0, 60.0, 50.0, 3.0, 3.0)
    torso_roll_kp: float = 3000.0
    torso_roll_kd: float = 150.0
    torso_pitch_kp: float = 3000.0
    torso_pitch_kd: float = 150.0
    stance_knee_kp: float = 4000.0
    stance_knee_kd: float = 100.0
    stance_yaw_kp: float = 400.0
    stance_yaw_kd: float = 30.0
    stance_ankle_damping: float = 1.0
    ankle_law: str = "flat"          # "flat" or "offset"
    ankle_roll_offset: float = 0.366
    ankle_pitch_offset: float = 0.065
    policy_update: str = "continuous"  # or "per_step"
    policy_rate_hz: float = 25.0
    # fraction of the swing over which the target blends from the lift-off point
    liftoff_blend: float = 0.5
    # put the ellipse baseline (and planned touchdown) on the latched support plane
    plane_following: bool = True

    def __post_init__(self):
        if self.swing_duration <= 0 or self.clearance <= 0:
            raise ValueError("swing_duration and clearance must be positive")
        gains = (*self.swing_kp, *self.swing_kd, self.torso_roll_kp, self.torso_roll_kd,
                 self.torso_pitch_kp, self.torso_pitch_kd, self.stance_knee_kp,
                 self.stance_knee_kd, self.stance_yaw_kp, self.stance_yaw_kd,
                 self.stance_ankle_damping)
        if any(g < 0 for g in gains):
            raise ValueError("gains must be nonnegative")
        if len(self.swing_kp) != 6 or len(self.swing_kd) != 6:
            raise ValueError("swing gains need 6 entries")
        if self.ankle_law not in ("flat", "offset"):
            raise ValueError("ankle_law must be 'flat' or 'offset'")
        if self.policy_update not in ("continuous", "per_step"):
            raise ValueError("policy_update must be 'continuous' or 'per_step'")
        if self.contact_debounce_ticks < 1:
            raise ValueError("contact_debounce_ticks must be >= 1")
        if not 0.0 <= self.liftoff_blend <= 1.0:
            raise ValueError("liftoff_blend must lie in [0, 1]")
        if self.foot_depth >= 0:
            raise ValueError("foot_depth must be negative (below the hip)")

    def vector(self) -> np.ndarray:
        v = np.zeros(GP_SIZE)
        v[GP_T_SWING] = self.swing_duration
        v[GP_CLEARANCE] = self.clearance
        v[GP_FOOT_DEPTH] = self.foot_depth
        v[GP_CONTACT_THR] = self.contact_force_threshold
        v[GP_DEBOUNCE] = self.contact_debounce_ticks
        v[GP_GUARD] = self.min_phase_guard
        v[GP_KP:GP_KP + 6] = self.swing_kp
        v[GP_KD:GP_KD + 6] = self.swing_kd
        v[GP_P_HR] = self.torso_roll_kp
        v[GP_D_HR] = self.torso_roll_kd
        v[GP_P_HP] = self.torso_pitch_kp
        v[GP_D_HP] = self.torso_pitch_kd
        v[GP_KNEE_KP] = self.stance_knee_kp
        v[GP_KNEE_KD] = self.stance_knee_kd
        v[GP_YAW_KP] = self.stance_yaw_kp
        v[GP_YAW_KD] = self.stance_yaw_kd
        v[GP_ANKLE_DAMP] = self.stance_ankle_damping
        v[GP_ANKLE_LAW] = 1.0 if self.ankle_law == "offset" else 0.0
        v[GP_OFF_R] = self.ankle_roll_offset
        v[GP_OFF_P] = self.ankle_pitch_offset
        v[GP_POLICY_HZ] = self.policy_rate_hz if self.policy_update == "continuous" else 0.0
        v[GP_BLEND] = self.liftoff_blend
        v[GP_PLANE] = 1.0 if self.plane_following else 0.0
        return v


(GP_T_SWING, GP_CLEARANCE, GP_FOOT_DEPTH, GP_CONTACT_THR, GP_DEBOUNCE, GP_GUARD) = range(6)
GP_KP = 6
GP_KD = 12
(GP_P_HR, GP_D_HR, GP_P_HP, GP_D_HP, GP_KNEE_KP, GP_KNEE_KD, GP_YAW_KP, GP_YAW_KD,
 GP_ANKLE_DAMP, GP_ANKLE_LAW, GP_OFF_R, GP_OFF_P, GP_POLICY_HZ, GP_BLEND, GP_PLANE,
 GP_SIZE) = range(18, 34)

# compiled gait-state vector layout
(S_TAU, S_SWING, S_STEPS, S_TIME_IN_STEP, S_GAMMA, S_ALPHA, S_KNEE_HOLD, S_STREAK_L,
 S_STREAK_R, S_SINCE_QUERY, S_LIFT, S_SIZE) = (*range(11), 14)


@dataclass(frozen=True)
class GaitState:
    tau: float = 0.0
    swing_leg: int = LEFT
    latched_plane: SupportPlane = SupportPlane()
    latched_action: Action = Action()
    steps_completed: int = 0
    time_in_step: float = 0.0
    stance_knee_hold: float = 0.0
    liftoff: tuple = (0.0, 0.0, -0.8)   # swing sole at lift-off, hip frame

    def __post_init__(self):
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must lie in [0, 1)")

    def vector(self) -> np.ndarray:
        s = np.zeros(S_SIZE)
        s[S_TAU] = self.tau
        s[S_SWING] = self.swing_leg
        s[S_STEPS] = self.steps_completed
        s[S_TIME_IN_STEP] = self.time_in_step
        s[S_GAMMA] = self.latched_plane.roll
        s[S_ALPHA] = self.latched_plane.pitch
        s[S_KNEE_HOLD] = self.stance_knee_hold
        s[S_LIFT:S_LIFT + 3] = self.liftoff
        return s


# ---------------------------------------------------------------------------
# trajectory


@njit(cache=True)
def swing_target_hip(action, tau, clearance, foot_depth, mirror, out):
    major = -0.5 * action[0] * math.cos(math.pi * tau)
    lift = clearance * math.sin(math.pi * tau)
    c = math.cos(action[1])
    s = math.sin(action[1])
    out[0] = c * major + action[2]
    out[1] = s * major + mirror * action[3]
    out[2] = lift + foot_depth + action[4]


@njit(cache=True)
def plane_offset(x, y, gamma, alpha):
    """Height of the (gamma, alpha) plane at (x, y) relative to the origin."""
    nx = math.sin(alpha) * math.cos(gamma)
    ny = -math.sin(gamma)
    nz = math.cos(alpha) * math.cos(gamma)
    return -(nx * x + ny * y) / nz


def swing_foot_target(action: Action, tau: float, params: GaitParams, leg) -> np.ndarray:
    """Swing sole target in the leg's hip frame (hip joint at the origin)."""
    if not 0.0 <= tau < 1.0:
        raise ValueError("tau must lie in [0, 1)")
    leg = _leg_index(leg)
    out = np.empty(3)
    swing_target_hip(action.as_array(), float(tau), params.clearance, params.foot_depth,
                     mirror_sign(leg), out)
    return out


# ---------------------------------------------------------------------------
# contact and phase


def detect_contact(report, foot, params: GaitParams, history: list) -> bool:
    """Append this tick's normal force for ``foot`` to ``history``; true once the
    last ``contact_debounce_ticks`` forces all exceed the threshold."""
    force = report[foot].normal_force if hasattr(report, "feet") else float(report)
    history.append(force)
    n = params.contact_debounce_ticks
    recent = history[-n:]
    return len(recent) == n and all(f > params.contact_force_threshold for f in recent)


def advance_phase(gait: GaitState, dt: float, swing_contact: bool, params: GaitParams,
                  plane_rotation=None, knee_angle: float | None = None) -> GaitState:
    """Advance the phase; on a step event swap legs, reset tau and latch the plane.

    ``plane_rotation`` is the world rotation of the foot used for the plane
    estimate and ``knee_angle`` the touchdown knee angle of the new stance leg.
    """
    tau = gait.tau + dt / params.swing_duration
    if tau >= 1.0 or (swing_contact and tau > params.min_phase_guard):
        plane = gait.latched_plane
        if plane_rotation is not None:
            plane = estimate_support_plane(plane_rotation)
        return replace(gait, tau=0.0, swing_leg=1 - gait.swing_leg, latched_plane=plane,
                       steps_completed=gait.steps_completed + 1, time_in_step=0.0,
                       stance_knee_hold=gait.stance_knee_hold if knee_angle is None else knee_angle)
    return replace(gait, tau=tau, time_in_step=gait.time_in_step + dt)


# ---------------------------------------------------------------------------
# regulators


def ankle_targets(q_hr: float, q_hp: float, roll: float, pitch: float, plane: SupportPlane,
                  swing_leg, offsets=(0.366, 0.065)) -> tuple:
    """Ankle roll/pitch targets of the swing foot in hardware joint coordinates."""
    sf = swing_sign(_leg_index(swing_leg))
    c_r, c_p = offsets
    q_tr = q_hr + sf * (c_r + roll + plane.roll)
    q_tp = q_hp + sf * (c_p - pitch - plane.pitch)
    return q_tr, q_tp


@dataclass(frozen=True)
class TorsoGains:
    roll_kp: float = 500.0
    roll_kd: float = 40.0
    pitch_kp: float = 500.0
    pitch_kd: float = 40.0


def torso_regulation(roll: float, pitch: float, roll_rate: float, pitch_rate: float,
                     gains: TorsoGains, swing_leg) -> tuple:
    """Stance hip (roll, pitch) torques driving the torso attitude to zero."""
    sf = swing_sign(_leg_index(swing_leg))
    u_hr = gains.roll_kp * (0.0 - roll) + gains.roll_kd * (0.0 - roll_rate)
    u_hp = -sf * (gains.pitch_kp * (0.0 - pitch) + gains.pitch_kd * (0.0 - pitch_rate))
    return u_hr, u_hp


@njit(cache=True)
def flat_foot_ankles(base_rot, yaw, hip_roll, hip_yaw, leg_pitch, gamma, alpha):
    """Ankle (pitch, roll) aligning the foot sole with the plane (gamma, alpha)
    expressed in the heading frame."""
    shank = base_rot @ (axis_rotation(0, hip_roll) @ (axis_rotation(2, hip_yaw)
                                                        @ axis_rotation(1, leg_pitch)))
    n_world = np.ascontiguousarray(rot_zyx(gamma, alpha, yaw)[:, 2])
    n = np.ascontiguousarray(shank.T) @ n_world
    roll = math.asin(min(max(-n[1], -1.0), 1.0))
    pitch = math.atan2(n[0], n[2])
    return pitch, roll


@njit(cache=True)
def clamped_leg_ik(geom, limits, leg, target, out, hip_yaw=0.0):
    """IK with the target pulled back into the reachable annulus; writes the
    four leg joints clipped to the joint limits."""
    base = 6 * leg
    hip_yaw = min(max(hip_yaw, limits[base + 1, 0]), limits[base + 1, 1])
    hip_y = 0.5 * geom[0] if leg == 0 else -0.5 * geom[0]
    lower = geom[2] + geom[3]
    lmax = geom[1] + lower
    dx = target[0]
    dy = target[1] - hip_y
    dz = min(target[2], -MIN_VIRTUAL_LEG)
    d = math.sqrt(dx * dx + dy * dy + dz * dz)
    hi = lmax * (1.0 - 1e-6)
    lo = MIN_VIRTUAL_LEG * (1.0 + 1e-6)
    scale = 1.0
    if d > hi:
        scale = hi / d
    elif d < lo:
        scale = lo / d
    tmp = np.empty(3)
    leg_ik(hip_y, geom[1], lower, dx * scale, hip_y + dy * scale, dz * scale, tmp, hip_yaw)
    out[0] = tmp[0]
    out[1] = hip_yaw
    out[2] = tmp[1]
    out[3] = tmp[2]
    for j in range(4):
        lo_j = limits[base + j, 0]
        hi_j = limits[base + j, 1]
        if out[j] < lo_j:
            out[j] = lo_j
        elif out[j] > hi_j:
            out[j] = hi_j


@njit(cache=True)
def sole_in_hip(geom, q, leg, out):
    """IK reference point of a leg (ankle height along the shank axis) in its hip frame."""
    b = 7 + 6 * leg
    hr, hy, hp, k = q[b], q[b + 1], q[b + 2], q[b + 3]
    lower = geom[2] + geom[3]
    x = -geom[1] * math.sin(hp) - lower * math.sin(hp + k)
    z = -geom[1] * math.cos(hp) - lower * math.cos(hp + k)
    # yaw then roll
    cy = math.cos(hy)
    sy = math.sin(hy)
    cr = math.cos(hr)
    sr = math.sin(hr)
    out[0] = cy * x
    out[1] = cr * sy * x - sr * z
    out[2] = sr * sy * x + cr * z


@njit(cache=True)
def touchdown_knee(geom, limits, gp, action, leg, gamma=0.0, alpha=0.0):
    """Knee angle of ``leg`` at the planned touchdown point (end of the ellipse)."""
    mirror = 1.0 if leg == 0 else -1.0
    target = np.empty(3)
    swing_target_hip(action, 1.0, gp[GP_CLEARANCE], gp[GP_FOOT_DEPTH], mirror, target)
    target[1] += 0.5 * geom[0] * mirror
    if gp[GP_PLANE] != 0.0:
        target[2] += plane_offset(target[0], target[1], gamma, alpha)
    leg_q = np.empty(4)
    clamped_leg_ik(geom, limits, leg, target, leg_q, action[1])
    return leg_q[3]


@njit(cache=True)
def control_torques(geom, limits, torque_limits, gp, q, v, gs, action, tau_out, qdes_out):
    """Joint torques for the current gait state (all 12 joints, clamped)."""
    rot = quat_to_rot(q[3:7])
    roll, pitch, yaw = euler_zyx(rot)
    w = v[:3]
    # Euler rates for the torso regulators
    cr = math.cos(roll)
    sr = math.sin(roll)
    yaw_rate = (w[1] * sr + w[2] * cr) / math.cos(pitch)
    pitch_rate = w[1] * cr - w[2] * sr
    roll_rate = w[0] + yaw_rate * math.sin(pitch)

    swing = int(gs[S_SWING])
    stance = 1 - swing
    sf = -1.0 if swing == 0 else 1.0
    mirror = 1.0 if swing == 0 else -1.0

    # swing leg: ellipse -> IK -> PD
    target = np.empty(3)
    swing_target_hip(action, gs[S_TAU], gp[GP_CLEARANCE], gp[GP_FOOT_DEPTH], mirror, target)
    if gp[GP_PLANE] != 0.0:
        target[2] += plane_offset(target[0], target[1] + 0.5 * geom[0] * mirror, gs[S_GAMMA],
                                  gs[S_ALPHA])
    if gs[S_TAU] < gp[GP_BLEND]:
        start = np.empty(3)
        swing_target_hip(action, 0.0, gp[GP_CLEARANCE], gp[GP_FOOT_DEPTH], mirror, start)
        if gp[GP_PLANE] != 0.0:
            start[2] += plane_offset(start[0], start[1] + 0.5 * geom[0] * mirror,
                                     gs[S_GAMMA], gs[S_ALPHA])
        w = 0.5 * (1.0 + math.cos(math.pi * gs[S_TAU] / gp[GP_BLEND]))
        for i in range(3):
            target[i] += w * (gs[S_LIFT + i] - start[i])
    target[1] += 0.5 * geom[0] * mirror
    leg_q = np.empty(4)
    clamped_leg_ik(geom, limits, swing, target, leg_q, action[1])
    sb = 6 * swing
    for j in range(4):
        qdes_out[sb + j] = leg_q[j]
    if gp[GP_ANKLE_LAW] == 0.0:
        ap, ar = flat_foot_ankles(rot, yaw, leg_q[0], leg_q[1], leg_q[2] + leg_q[3],
                                  gs[S_GAMMA], gs[S_ALPHA])
    else:
        ar = leg_q[0] + sf * (gp[GP_OFF_R] + roll + gs[S_GAMMA])
        ap = leg_q[2] + sf * (gp[GP_OFF_P] - pitch - gs[S_ALPHA])
    qdes_out[sb + 4] = min(max(ap, limits[sb + 4, 0]), limits[sb + 4, 1])
    qdes_out[sb + 5] = min(max(ar, limits[sb + 5, 0]), limits[sb + 5, 1])
    for j in range(6):
        k = sb + j
        tau_out[k] = gp[GP_KP + j] * (qdes_out[k] - q[7 + k]) - gp[GP_KD + j] * v[6 + k]

    # stance leg: torso regulation through the hip, knee hold, passive ankle
    tb = 6 * stance
    u_hr = gp[GP_P_HR] * (0.0 - roll) + gp[GP_D_HR] * (0.0 - roll_rate)
    u_hp = -sf * (gp[GP_P_HP] * (0.0 - pitch) + gp[GP_D_HP] * (0.0 - pitch_rate))
    tau_out[tb + 0] = STANCE_ROLL_SIGN * u_hr
    tau_out[tb + 2] = sf * u_hp
    tau_out[tb + 1] = gp[GP_YAW_KP] * (0.0 - q[7 + tb + 1]) - gp[GP_YAW_KD] * v[6 + tb + 1]
    tau_out[tb + 3] = (gp[GP_KNEE_KP] * (gs[S_KNEE_HOLD] - q[7 + tb + 3])
                       - gp[GP_KNEE_KD] * v[6 + tb + 3])
    tau_out[tb + 4] = -gp[GP_ANKLE_DAMP] * v[6 + tb + 4]
    tau_out[tb + 5] = -gp[GP_ANKLE_DAMP] * v[6 + tb + 5]
    qdes_out[tb + 0] = q[7 + tb + 0]
    qdes_out[tb + 1] = 0.0
    qdes_out[tb + 2] = q[7 + tb + 2]
    qdes_out[tb + 3] = gs[S_KNEE_HOLD]
    qdes_out[tb + 4] = q[7 + tb + 4]
    qdes_out[tb + 5] = q[7 + tb + 5]

    for k in range(12):
        lim = torque_limits[k]
        if tau_out[k] > lim:
            tau_out[k] = lim
        elif tau_out[k] < -lim:
            tau_out[k] = -lim


def compute_torques(model: RobotModel, sim_state, gait_state: GaitState,
                    params: GaitParams) -> np.ndarray:
    """Joint torques for ``sim_state`` under ``gait_state`` (clamped to the limits)."""
    arr = model.arrays()
    tau = np.zeros(N_JOINTS)
    qdes = np.zeros(N_JOINTS)
    control_torques(arr.geom, arr.limits, arr.torque_limits, params.vector(), sim_state.q,
                    sim_state.v, gait_state.vector(), gait_state.latched_action.as_array(),
                    tau, qdes)
    return tau
