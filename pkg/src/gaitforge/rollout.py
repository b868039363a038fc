"""Compiled episode loop shared by training and evaluation.

Everything that runs per physics tick (policy query, gait controller,
dynamics, contact detection, phase logic, rewards, termination and logging)
lives in ``episode_kernel`` so an episode is one call into compiled code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .gait import (GP_CONTACT_THR, GP_DEBOUNCE, GP_GUARD, GP_POLICY_HZ,
                   GP_T_SWING, S_ALPHA, S_GAMMA, S_KNEE_HOLD, S_SINCE_QUERY, S_STEPS,
                   S_STREAK_L, S_SWING, S_TAU, S_TIME_IN_STEP, S_SIZE, S_LIFT,
                   GaitParams, clamped_leg_ik, control_torques, flat_foot_ankles, sole_in_hip,
                   touchdown_knee)
from .physics import C_FN, C_NPTS, N_CONTACTS, PhysicsParams, SimState, step_kernel
from .policy import (LATERAL_OBS, N_OBS, CommandState, PolicyMatrix, observation_kernel,
                     wrap_angle)
from .gait import ACTION_HIGH, ACTION_LOW
from .robot_model import (LEFT, PLANE_LIMIT, BasePose, RobotModel, axis_rotation, euler_rates,
                          euler_zyx, quat_to_rot, rot_zyx)
from .terrain import Terrain, height_at, normal_at

TERMINATION_CAUSES = ("max_len", "topple", "height", "diverged")
MAX_LEN, TOPPLE, HEIGHT, DIVERGED = range(4)

# episode configuration vector
(E_TICKS, E_TASK, E_W1, E_W2, E_W3, E_W4, E_W5, E_WDX, E_TOPPLE, E_HFRAC, E_NOMINAL,
 E_PUSH_T0, E_PUSH_DUR, E_PUSH_FX, E_PUSH_FY, E_PUSH_FZ, E_LOG_EVERY, E_SIZE) = range(18)

# result vector
(R_REWARD, R_TICKS, R_DISTANCE, R_CAUSE, R_STAB_SUM, R_POS_WORK, R_STEPS, R_FINAL_X,
 R_FINAL_Y, R_LOGGED, R_SIZE) = range(11)

LOG_COLUMNS = (
    ["time", "x", "y", "z", "roll", "pitch", "yaw", "vx", "vy", "vz", "roll_rate",
     "pitch_rate", "yaw_rate"]
    + [f"q_{i}" for i in range(12)] + [f"qd_{i}" for i in range(12)]
    + [f"tau_{i}" for i in range(12)] + [f"qdes_{i}" for i in range(12)]
    + ["phase", "swing_leg", "step_length", "ellipse_yaw", "shift_x", "shift_y", "shift_z"]
    + [f"obs_{i}" for i in range(12)]
    + ["fn_left", "fn_right", "cmd_vx", "cmd_vy", "cmd_yaw", "terrain_h", "e_pz"])
N_LOG = len(LOG_COLUMNS)
L_Q, L_QD, L_TAU, L_QDES, L_PHASE, L_ACTION, L_OBS, L_FN, L_CMD, L_H, L_EPZ = (
    LOG_COLUMNS.index(c) for c in ("q_0", "qd_0", "tau_0", "qdes_0", "phase", "step_length",
                                   "obs_0", "fn_left", "cmd_vx", "terrain_h", "e_pz"))

TASK_TERRAIN, TASK_COMMAND = 0, 1


@njit(cache=True)
def foot_rotation(base_rot, q, leg):
    b = 7 + 6 * leg
    return base_rot @ (axis_rotation(0, q[b]) @ (axis_rotation(2, q[b + 1]) @ (
        axis_rotation(1, q[b + 2] + q[b + 3] + q[b + 4]) @ axis_rotation(0, q[b + 5]))))


@njit(cache=True)
def _query_policy(mat, q, v, gs, vx_d, vy_d, yaw_d, obs, action, lo, hi):
    observation_kernel(q, v, gs[S_GAMMA], gs[S_ALPHA], vx_d, vy_d, yaw_d, obs)
    m_obs = obs.copy()
    if gs[S_SWING] == 1.0:
        for k in LATERAL_OBS:
            m_obs[k] = -m_obs[k]
    for i in range(5):
        s = 0.0
        for j in range(m_obs.shape[0]):
            s += mat[i, j] * m_obs[j]
        action[i] = min(max(s, lo[i]), hi[i])


@njit(cache=True)
def episode_kernel(parent, axis, tree_r, mass, com, inertia6, corners, foot_bodies, limits,
                   torque_limits, armature, geom, kind, tparams, segs, pp, dt, gp, mat, cfg, cmd_times,
                   cmd_vals, q, v, anchors, active, gs, action, log, result):
    n_ticks = int(cfg[E_TICKS])
    command_task = cfg[E_TASK] == 1.0
    w1, w2, w3, w4, w5 = cfg[E_W1], cfg[E_W2], cfg[E_W3], cfg[E_W4], cfg[E_W5]
    nominal = cfg[E_NOMINAL]
    log_every = max(int(cfg[E_LOG_EVERY]), 1)
    policy_period = 1.0 / gp[GP_POLICY_HZ] if gp[GP_POLICY_HZ] > 0.0 else 1e300
    debounce = int(gp[GP_DEBOUNCE])
    lo = ACTION_LOW_C
    hi = ACTION_HIGH_C

    tau_cmd = np.zeros(12)
    qdes = np.zeros(12)
    tau_app = np.zeros(12)
    summary = np.zeros((2, 7))
    points = np.zeros((N_CONTACTS, 4))
    ext = np.zeros(3)
    obs = np.zeros(N_OBS)
    lift = np.zeros(3)
    # stance foot orientation at the last instant it was fully in contact
    flat_rp = np.empty((2, 2))
    for f in range(2):
        flat_rp[f, 0] = gs[S_GAMMA]
        flat_rp[f, 1] = gs[S_ALPHA]

    total = 0.0
    distance = 0.0
    stab = 0.0
    work = 0.0
    cause = MAX_LEN
    ticks = 0
    n_logged = 0
    k_cmd = 0
    need_query = True
    t = 0.0
    for tick in range(n_ticks):
        while k_cmd + 1 < cmd_times.shape[0] and t >= cmd_times[k_cmd + 1] - 1e-12:
            k_cmd += 1
        vx_d = cmd_vals[k_cmd, 0]
        vy_d = cmd_vals[k_cmd, 1]
        yaw_d = cmd_vals[k_cmd, 2]

        if need_query or gs[S_SINCE_QUERY] >= policy_period - 1e-12:
            _query_policy(mat, q, v, gs, vx_d, vy_d, yaw_d, obs, action, lo, hi)
            gs[S_SINCE_QUERY] = 0.0
            need_query = False

        control_torques(geom, limits, torque_limits, gp, q, v, gs, action, tau_cmd, qdes)

        if cfg[E_PUSH_DUR] > 0.0 and cfg[E_PUSH_T0] <= t + 1e-12 < cfg[E_PUSH_T0] + cfg[E_PUSH_DUR]:
            ext[0] = cfg[E_PUSH_FX]
            ext[1] = cfg[E_PUSH_FY]
            ext[2] = cfg[E_PUSH_FZ]
        else:
            ext[0] = 0.0
            ext[1] = 0.0
            ext[2] = 0.0

        x_old = q[0]
        y_old = q[1]
        status = step_kernel(parent, axis, tree_r, mass, com, inertia6, corners, foot_bodies,
                             limits, torque_limits, armature, q, v, anchors, active, tau_cmd, kind,
                             tparams, segs, pp, dt, ext, summary, points, tau_app)
        t = (tick + 1) * dt
        ticks = tick + 1
        if status != 0:
            cause = DIVERGED
            break

        # contact debounce and phase logic
        swing = int(gs[S_SWING])
        for f in range(2):
            idx = S_STREAK_L + f
            if summary[f, C_FN] > gp[GP_CONTACT_THR]:
                gs[idx] += 1.0
            else:
                gs[idx] = 0.0
        touched = gs[S_STREAK_L + swing] >= debounce
        stance = 1 - swing
        if summary[stance, C_NPTS] >= 4.0:
            roll_f, pitch_f, _ = euler_zyx(foot_rotation(quat_to_rot(q[3:7]), q, stance))
            flat_rp[stance, 0] = roll_f
            flat_rp[stance, 1] = pitch_f
        gs[S_TAU] += dt / gp[GP_T_SWING]
        gs[S_TIME_IN_STEP] += dt
        gs[S_SINCE_QUERY] += dt
        if gs[S_TAU] >= 1.0 or (touched and gs[S_TAU] > gp[GP_GUARD]):
            gs[S_GAMMA] = min(max(flat_rp[stance, 0], -PLANE_LIMIT), PLANE_LIMIT)
            gs[S_ALPHA] = min(max(flat_rp[stance, 1], -PLANE_LIMIT), PLANE_LIMIT)
            gs[S_KNEE_HOLD] = touchdown_knee(geom, limits, gp, action, swing, gs[S_GAMMA],
                                               gs[S_ALPHA])
            sole_in_hip(geom, q, stance, lift)
            for i in range(3):
                gs[S_LIFT + i] = lift[i]
            gs[S_SWING] = float(stance)
            gs[S_TAU] = 0.0
            gs[S_TIME_IN_STEP] = 0.0
            gs[S_STEPS] += 1.0
            need_query = True

        # reward and metrics
        rot = quat_to_rot(q[3:7])
        roll, pitch, yaw = euler_zyx(rot)
        e_yaw = wrap_angle(yaw_d - yaw)
        h = height_at(kind, tparams, segs, q[0], q[1])
        e_pz = nominal - (q[2] - h)
        g4 = (math.exp(-w1 * roll * roll) + math.exp(-w2 * pitch * pitch)
              + math.exp(-w3 * e_yaw * e_yaw) + math.exp(-w4 * e_pz * e_pz))
        stab += g4
        dx = (q[0] - x_old) * math.cos(yaw_d) + (q[1] - y_old) * math.sin(yaw_d)
        distance += dx
        if command_task:
            vw = rot @ v[3:6]
            c = math.cos(yaw)
            s = math.sin(yaw)
            evx = vx_d - (c * vw[0] + s * vw[1])
            evy = vy_d - (-s * vw[0] + c * vw[1])
            total += g4 + math.exp(-w5 * (evx * evx + evy * evy))
        else:
            total += g4 + cfg[E_WDX] * dx
        for j in range(12):
            p = tau_app[j] * v[6 + j]
            if p > 0.0:
                work += p * dt

        if log.shape[0] > 0 and tick % log_every == 0 and n_logged < log.shape[0]:
            row = log[n_logged]
            row[0] = t
            row[1] = q[0]
            row[2] = q[1]
            row[3] = q[2]
            row[4] = roll
            row[5] = pitch
            row[6] = yaw
            vw = rot @ v[3:6]
            row[7] = vw[0]
            row[8] = vw[1]
            row[9] = vw[2]
            rr, pr, yr = euler_rates(roll, pitch, v[:3])
            row[10] = rr
            row[11] = pr
            row[12] = yr
            for j in range(12):
                row[L_Q + j] = q[7 + j]
                row[L_QD + j] = v[6 + j]
                row[L_TAU + j] = tau_app[j]
                row[L_QDES + j] = qdes[j]
            row[L_PHASE] = gs[S_TAU]
            row[L_PHASE + 1] = gs[S_SWING]
            for i in range(5):
                row[L_ACTION + i] = action[i]
            for i in range(N_OBS):
                row[L_OBS + i] = obs[i]
            row[L_FN] = summary[0, C_FN]
            row[L_FN + 1] = summary[1, C_FN]
            row[L_CMD] = vx_d
            row[L_CMD + 1] = vy_d
            row[L_CMD + 2] = yaw_d
            row[L_H] = h
            row[L_EPZ] = e_pz
            n_logged += 1

        if abs(roll) > cfg[E_TOPPLE] or abs(pitch) > cfg[E_TOPPLE]:
            cause = TOPPLE
            break
        if q[2] - h < cfg[E_HFRAC] * nominal:
            cause = HEIGHT
            break

    result[R_REWARD] = total
    result[R_TICKS] = ticks
    result[R_DISTANCE] = distance
    result[R_CAUSE] = cause
    result[R_STAB_SUM] = stab
    result[R_POS_WORK] = work
    result[R_STEPS] = gs[S_STEPS]
    result[R_FINAL_X] = q[0]
    result[R_FINAL_Y] = q[1]
    result[R_LOGGED] = n_logged


ACTION_LOW_C = ACTION_LOW.copy()
ACTION_HIGH_C = ACTION_HIGH.copy()


# ---------------------------------------------------------------------------
# python-facing setup


@dataclass(frozen=True)
class Push:
    force: tuple = (0.0, 0.0, 0.0)   # N, world frame
    start: float = 1.0               # s
    duration: float = 0.1            # s


@dataclass(frozen=True)
class EpisodeSetup:
    terrain: Terrain = Terrain()
    command_times: tuple = (0.0,)
    commands: tuple = (CommandState(0.2, 0.0, 0.0),)
    push: Push | None = None

    def __post_init__(self):
        if len(self.command_times) != len(self.commands) or not self.commands:
            raise ValueError("command_times and commands must have equal nonzero length")
        if self.command_times[0] != 0.0 or any(
                b <= a for a, b in zip(self.command_times, self.command_times[1:])):
            raise ValueError("command times must start at 0 and increase")


@dataclass(frozen=True)
class RewardWeights:
    roll: float = 10.0
    pitch: float = 10.0
    yaw: float = 5.0
    height: float = 100.0
    velocity: float = 50.0
    progress: float = 30.0

    def __post_init__(self):
        if min(self.roll, self.pitch, self.yaw, self.height, self.velocity, self.progress) < 0:
            raise ValueError("reward weights must be nonnegative")


@dataclass(frozen=True)
class EpisodeResult:
    total_reward: float
    ticks_survived: int
    distance: float
    termination_cause: str
    stability_sum: float = 0.0
    positive_work: float = 0.0
    steps: int = 0
    final_position: tuple = (0.0, 0.0)
    log: np.ndarray | None = field(default=None, compare=False, repr=False)


def standing_state(model: RobotModel, gait: GaitParams, terrain: Terrain, x: float = 0.0,
                   yaw: float = 0.0, forward_speed: float = 0.0,
                   lateral_sway: bool = True) -> tuple:
    """Double-support standing pose with both soles flush on the terrain.

    The first swing leg is the left one. With ``lateral_sway`` the base starts
    with the sideways velocity of a periodic inverted-pendulum sway moving
    toward the right (stance) foot, so the first step is not a cold start.
    Returns (SimState, gait state vector).
    """
    arr = model.arrays()
    kind, tparams, segs = terrain.encode()
    rz = rot_zyx(0.0, 0.0, yaw)
    feet = []
    for leg in (0, 1):
        hip = rz @ model.hip_offset(leg)
        fx, fy = x + hip[0], hip[1]
        feet.append((fx, fy, height_at(kind, tparams, segs, fx, fy)))
    z = max(f[2] for f in feet) - gait.foot_depth
    joints = np.zeros(12)
    planes = []
    for leg, (fx, fy, h) in enumerate(feet):
        target = rz.T @ np.array([fx - x, fy, h - z])
        leg_q = np.empty(4)
        clamped_leg_ik(arr.geom, arr.limits, leg, target, leg_q)
        n = np.array(normal_at(kind, tparams, segs, fx, fy))
        nh = rz.T @ n
        gamma = -math.asin(nh[1])
        alpha = math.atan2(nh[0], nh[2])
        ap, ar = flat_foot_ankles(rz, yaw, leg_q[0], leg_q[1], leg_q[2] + leg_q[3], gamma, alpha)
        joints[6 * leg:6 * leg + 4] = leg_q
        joints[6 * leg + 4] = ap
        joints[6 * leg + 5] = ar
        planes.append((gamma, alpha))
    vy = 0.0
    if lateral_sway:
        omega = math.sqrt(9.81 / -gait.foot_depth)
        vy = -0.5 * model.hip_width * omega * math.tanh(0.5 * omega * gait.swing_duration)
    vel = rz @ np.array([forward_speed, vy, 0.0])
    state = SimState.from_pose(BasePose(x, 0.0, z, 0.0, 0.0, yaw), joints, base_lin_vel=vel)
    gs = np.zeros(S_SIZE)
    gs[S_SWING] = LEFT
    gs[S_GAMMA], gs[S_ALPHA] = planes[1]
    gs[S_KNEE_HOLD] = joints[6 + 3]
    lift = np.zeros(3)
    sole_in_hip(arr.geom, state.q, LEFT, lift)
    gs[S_LIFT:S_LIFT + 3] = lift
    return state, gs


class EpisodeRunner:
    """Binds model, physics and gait parameters for repeated episodes."""

    def __init__(self, model: RobotModel = RobotModel(), physics: PhysicsParams = PhysicsParams(),
                 gait: GaitParams = GaitParams(), weights: RewardWeights = RewardWeights(),
                 episode_len: int = 15000, topple: float = 0.6, height_fraction: float = 0.6,
                 initial_noise: float = 0.02):
        self.model = model
        self.physics = physics
        self.gait = gait
        self.weights = weights
        self.episode_len = int(episode_len)
        self.topple = topple
        self.height_fraction = height_fraction
        self.initial_noise = initial_noise
        self.arrays = model.arrays()
        self.gait_vector = gait.vector()

    def config_vector(self, task: str, push: Push | None, log_every: int, ticks: int | None):
        w = self.weights
        cfg = np.zeros(E_SIZE)
        cfg[E_TICKS] = self.episode_len if ticks is None else ticks
        cfg[E_TASK] = TASK_COMMAND if task == "command" else TASK_TERRAIN
        cfg[E_W1:E_WDX + 1] = (w.roll, w.pitch, w.yaw, w.height, w.velocity, w.progress)
        cfg[E_TOPPLE] = self.topple
        cfg[E_HFRAC] = self.height_fraction
        cfg[E_NOMINAL] = -self.gait.foot_depth
        if push is not None:
            cfg[E_PUSH_T0] = push.start
            cfg[E_PUSH_DUR] = push.duration
            cfg[E_PUSH_FX:E_PUSH_FZ + 1] = push.force
        cfg[E_LOG_EVERY] = log_every
        return cfg

    def run(self, policy: PolicyMatrix, setup: EpisodeSetup, seed: int = 0, log: bool = False,
            log_every: int = 1, ticks: int | None = None) -> EpisodeResult:
        rng = np.random.default_rng(seed)
        first = setup.commands[0]
        state, gs = standing_state(self.model, self.gait, setup.terrain, yaw=first.yaw,
                                   forward_speed=0.0)
        # seeded perturbation of the initial base velocity
        state.v[3:6] += self.initial_noise * rng.uniform(-1.0, 1.0, 3) * np.array([1.0, 1.0, 0.0])
        n = self.episode_len if ticks is None else int(ticks)
        logbuf = np.zeros(((n + log_every - 1) // log_every if log else 0, N_LOG))
        cfg = self.config_vector(policy.task, setup.push, log_every, n)
        kind, tparams, segs = setup.terrain.encode()
        pp = self.physics.vector(setup.terrain.friction_coefficient)
        times = np.array(setup.command_times, dtype=float)
        vals = np.array([[c.vx, c.vy, c.yaw] for c in setup.commands], dtype=float)
        a = self.arrays
        result = np.zeros(R_SIZE)
        action = np.zeros(5)
        episode_kernel(a.parent, a.axis, a.tree_r, a.mass, a.com, a.inertia6, a.corners,
                       np.array([6, 12], dtype=np.int64), a.limits, a.torque_limits, a.armature, a.geom,
                       kind, tparams, segs, pp, self.physics.dt, self.gait_vector,
                       np.ascontiguousarray(policy.values), cfg, times, vals, state.q, state.v,
                       state.anchors, state.anchor_active, gs, action, logbuf, result)
        return EpisodeResult(
            total_reward=float(result[R_REWARD]), ticks_survived=int(result[R_TICKS]),
            distance=float(result[R_DISTANCE]),
            termination_cause=TERMINATION_CAUSES[int(result[R_CAUSE])],
            stability_sum=float(result[R_STAB_SUM]), positive_work=float(result[R_POS_WORK]),
            steps=int(result[R_STEPS]), final_position=(float(result[R_FINAL_X]),
                                                         float(result[R_FINAL_Y])),
            log=logbuf[:int(result[R_LOGGED])] if log else None)
