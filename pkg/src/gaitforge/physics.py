"""Floating-base articulated dynamics with penalty foot contact.

The kernel runs Featherstone's articulated-body algorithm on the 13-body
tree (base velocity in body coordinates, angular-first spatial vectors) and
advances with semi-implicit Euler. Each foot has four corner contact points
with a one-sided spring-damper normal force and an anchored tangential
spring clamped to the Coulomb cone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .robot_model import (N_JOINTS, BasePose, RobotModel, axis_rotation,
                          body_rates, euler_rates, euler_zyx, quat_to_rot, rot_to_quat)
from .terrain import Terrain, height_at, normal_at

N_CONTACTS = 8
DIVERGENCE_BOUND = 1e6

# physics parameter vector layout
P_GRAVITY, P_KN, P_CN, P_KT, P_CT, P_MU, P_FIXED, P_LIMIT_K, P_LIMIT_D = range(9)
# per-foot contact summary layout
C_FN, C_FT1, C_FT2, C_NPTS, C_COPX, C_COPY, C_COPZ = range(7)


class Diverged(RuntimeError):
    def __init__(self, state):
        self.state = state
        super().__init__(f"simulation diverged at t={state.time:.4f}s")


@dataclass(frozen=True)
class PhysicsParams:
    dt: float = 5e-4
    gravity: float = 9.81
    contact_stiffness: float = 5e4
    contact_damping: float = 500.0
    tangential_stiffness: float = 5e4
    tangential_damping: float = 500.0
    joint_limit_stiffness: float = 0.0
    joint_limit_damping: float = 0.0
    fixed_base: bool = False

    def __post_init__(self):
        if not 0 < self.dt <= 0.002:
            raise ValueError("dt must lie in (0, 0.002]")
        for name in ("contact_stiffness", "contact_damping", "tangential_stiffness",
                     "tangential_damping", "joint_limit_stiffness", "joint_limit_damping"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def vector(self, friction: float) -> np.ndarray:
        return np.array([self.gravity, self.contact_stiffness, self.contact_damping,
                         self.tangential_stiffness, self.tangential_damping, friction,
                         1.0 if self.fixed_base else 0.0, self.joint_limit_stiffness,
                         self.joint_limit_damping])


@dataclass
class SimState:
    """Generalized coordinates and velocities.

    ``q`` = [position(3), quaternion wxyz(4), joints(12)];
    ``v`` = [angular velocity (body frame, 3), linear velocity of the base
    origin (body frame, 3), joint rates(12)].
    """

    q: np.ndarray
    v: np.ndarray
    time: float = 0.0
    anchors: np.ndarray = field(default_factory=lambda: np.zeros((N_CONTACTS, 3)))
    anchor_active: np.ndarray = field(default_factory=lambda: np.zeros(N_CONTACTS))

    @classmethod
    def from_pose(cls, base: BasePose, joints=None, base_lin_vel=(0.0, 0.0, 0.0),
                  euler_rate=(0.0, 0.0, 0.0), joint_vel=None, time=0.0) -> "SimState":
        q = np.zeros(7 + N_JOINTS)
        v = np.zeros(6 + N_JOINTS)
        rot = base.rotation
        q[:3] = base.position
        q[3:7] = rot_to_quat(rot)
        if joints is not None:
            q[7:] = joints
        v[:3] = body_rates(base.roll, base.pitch, *map(float, euler_rate))
        v[3:6] = rot.T @ np.asarray(base_lin_vel, dtype=float)
        if joint_vel is not None:
            v[6:] = joint_vel
        return cls(q, v, time)

    def copy(self) -> "SimState":
        return SimState(self.q.copy(), self.v.copy(), self.time, self.anchors.copy(),
                        self.anchor_active.copy())

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_rot(self.q[3:7])

    @property
    def base(self) -> BasePose:
        roll, pitch, yaw = euler_zyx(self.rotation)
        return BasePose(*self.q[:3], roll, pitch, yaw)

    @property
    def base_lin_vel(self) -> np.ndarray:
        return self.rotation @ self.v[3:6]

    @property
    def base_ang_vel(self) -> np.ndarray:
        """Euler angle rates (roll, pitch, yaw)."""
        roll, pitch, _ = euler_zyx(self.rotation)
        return np.array(euler_rates(roll, pitch, self.v[:3]))

    @property
    def joints(self) -> np.ndarray:
        return self.q[7:]

    @property
    def joint_vel(self) -> np.ndarray:
        return self.v[6:]


@dataclass(frozen=True)
class FootContact:
    normal_force: float
    tangential_force: np.ndarray
    num_points_in_contact: int
    center_of_pressure: np.ndarray


@dataclass(frozen=True)
class ContactReport:
    feet: tuple  # (left, right) FootContact
    point_forces: np.ndarray  # (8, 4): normal magnitude and world tangential vector

    def __getitem__(self, foot) -> FootContact:
        return self.feet[0 if foot in (0, "L", "left") else 1]

    @property
    def normal_forces(self) -> np.ndarray:
        return np.array([f.normal_force for f in self.feet])

    @classmethod
    def from_arrays(cls, summary, points) -> "ContactReport":
        feet = tuple(FootContact(float(s[C_FN]), np.array(s[C_FT1:C_FT2 + 1]),
                                 int(s[C_NPTS]), np.array(s[C_COPX:C_COPZ + 1]))
                     for s in summary)
        return cls(feet, points.copy())


# ---------------------------------------------------------------------------
# small dense helpers (hand-written to avoid BLAS call overhead on 6x6 data)


@njit(cache=True, inline="always")
def _cross(a0, a1, a2, b0, b1, b2):
    return a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0


@njit(cache=True)
def _plucker(e, r, out):
    """Motion transform [E 0; -E rx E] into ``out``."""
    for i in range(3):
        for j in range(3):
            out[i, j] = e[i, j]
            out[i + 3, j + 3] = e[i, j]
            out[i, j + 3] = 0.0
    # -E @ skew(r)
    for i in range(3):
        out[i + 3, 0] = -(e[i, 1] * r[2] - e[i, 2] * r[1])
        out[i + 3, 1] = -(e[i, 2] * r[0] - e[i, 0] * r[2])
        out[i + 3, 2] = -(e[i, 0] * r[1] - e[i, 1] * r[0])


@njit(cache=True)
def _mv6(a, x, out):
    for i in range(6):
        s = 0.0
        for k in range(6):
            s += a[i, k] * x[k]
        out[i] = s


@njit(cache=True)
def _mtv6(a, x, out):
    for i in range(6):
        s = 0.0
        for k in range(6):
            s += a[k, i] * x[k]
        out[i] = s


@njit(cache=True)
def _congruence_add(x, ia, acc, tmp):
    """acc += x.T @ ia @ x."""
    for i in range(6):
        for j in range(6):
            s = 0.0
            for k in range(6):
                s += ia[i, k] * x[k, j]
            tmp[i, j] = s
    for i in range(6):
        for j in range(6):
            s = 0.0
            for k in range(6):
                s += x[k, i] * tmp[k, j]
            acc[i, j] += s


@njit(cache=True)
def _force_cross(v, f, out):
    """out = v x* f for motion v and force f."""
    w0, w1, w2, u0, u1, u2 = v[0], v[1], v[2], v[3], v[4], v[5]
    n0, n1, n2, f0, f1, f2 = f[0], f[1], f[2], f[3], f[4], f[5]
    a0, a1, a2 = _cross(w0, w1, w2, n0, n1, n2)
    b0, b1, b2 = _cross(u0, u1, u2, f0, f1, f2)
    c0, c1, c2 = _cross(w0, w1, w2, f0, f1, f2)
    out[0] = a0 + b0
    out[1] = a1 + b1
    out[2] = a2 + b2
    out[3] = c0
    out[4] = c1
    out[5] = c2


@njit(cache=True)
def _quat_integrate(q, w, dt):
    wx, wy, wz = w[0] * dt, w[1] * dt, w[2] * dt
    ang = math.sqrt(wx * wx + wy * wy + wz * wz)
    if ang < 1e-12:
        dw, dx, dy, dz = 1.0, 0.5 * wx, 0.5 * wy, 0.5 * wz
    else:
        s = math.sin(0.5 * ang) / ang
        dw, dx, dy, dz = math.cos(0.5 * ang), wx * s, wy * s, wz * s
    a0, a1, a2, a3 = q[0], q[1], q[2], q[3]
    q[0] = a0 * dw - a1 * dx - a2 * dy - a3 * dz
    q[1] = a0 * dx + a1 * dw + a2 * dz - a3 * dy
    q[2] = a0 * dy - a1 * dz + a2 * dw + a3 * dx
    q[3] = a0 * dz + a1 * dy - a2 * dx + a3 * dw
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    for i in range(4):
        q[i] /= n


# ---------------------------------------------------------------------------
# kinematics pass shared by dynamics, contact and energy


@njit(cache=True)
def forward_pass(parent, axis, tree_r, q, v, rot, pos, vel, xup, cvec):
    """World poses, body-frame spatial velocities, transforms and bias terms."""
    n = parent.shape[0]
    rot[0] = quat_to_rot(q[3:7])
    for i in range(3):
        pos[0, i] = q[i]
    for i in range(6):
        vel[0, i] = v[i]
    for b in range(1, n):
        p = parent[b]
        a = axis[b]
        r = axis_rotation(a, q[6 + b])
        rp = rot[p]
        for i in range(3):
            pos[b, i] = pos[p, i] + rp[i, 0] * tree_r[b, 0] + rp[i, 1] * tree_r[b, 1] + rp[i, 2] * tree_r[b, 2]
        rot[b] = rp @ r
        _plucker(r.T, tree_r[b], xup[b])
        _mv6(xup[b], vel[p], vel[b])
        qd = v[5 + b]
        vel[b, a] += qd
        # c = v x (S qd), S = unit angular axis
        w0, w1, w2, u0, u1, u2 = vel[b, 0], vel[b, 1], vel[b, 2], vel[b, 3], vel[b, 4], vel[b, 5]
        s0 = qd if a == 0 else 0.0
        s1 = qd if a == 1 else 0.0
        s2 = qd if a == 2 else 0.0
        c0, c1, c2 = _cross(w0, w1, w2, s0, s1, s2)
        d0, d1, d2 = _cross(u0, u1, u2, s0, s1, s2)
        cvec[b, 0] = c0
        cvec[b, 1] = c1
        cvec[b, 2] = c2
        cvec[b, 3] = d0
        cvec[b, 4] = d1
        cvec[b, 5] = d2


@njit(cache=True)
def contact_forces(rot, pos, vel, foot_bodies, corners, kind, tparams, segs, pp,
                   anchors, active, fext, summary, points):
    """Penalty contact at the foot corners; updates anchors and adds body wrenches."""
    kn, cn, kt, ct, mu = pp[P_KN], pp[P_CN], pp[P_KT], pp[P_CT], pp[P_MU]
    for f in range(2):
        b = foot_bodies[f]
        r = rot[b]
        fn_sum = 0.0
        ft = np.zeros(3)
        cop = np.zeros(3)
        npts = 0
        nrm_ref = np.zeros(3)
        for c in range(4):
            k = 4 * f + c
            rc = corners[c]
            x = pos[b] + r @ rc
            h = height_at(kind, tparams, segs, x[0], x[1])
            nx, ny, nz = normal_at(kind, tparams, segs, x[0], x[1])
            depth = (h - x[2]) * nz
            points[k, 0] = 0.0
            points[k, 1] = 0.0
            points[k, 2] = 0.0
            points[k, 3] = 0.0
            if depth <= 0.0:
                active[k] = 0.0
                continue
            npts += 1
            w = vel[b, :3]
            lv = vel[b, 3:]
            e0, e1, e2 = _cross(w[0], w[1], w[2], rc[0], rc[1], rc[2])
            ub = np.array([lv[0] + e0, lv[1] + e1, lv[2] + e2])
            u = r @ ub
            vn = u[0] * nx + u[1] * ny + u[2] * nz
            fn = kn * depth - cn * vn
            if fn < 0.0:
                fn = 0.0
            if active[k] == 0.0:
                anchors[k] = x
                active[k] = 1.0
            dx = x - anchors[k]
            dn = dx[0] * nx + dx[1] * ny + dx[2] * nz
            ftv = np.empty(3)
            ftv[0] = -kt * (dx[0] - dn * nx) - ct * (u[0] - vn * nx)
            ftv[1] = -kt * (dx[1] - dn * ny) - ct * (u[1] - vn * ny)
            ftv[2] = -kt * (dx[2] - dn * nz) - ct * (u[2] - vn * nz)
            mag = math.sqrt(ftv[0] ** 2 + ftv[1] ** 2 + ftv[2] ** 2)
            cap = mu * fn
            if mag > cap:
                scale = cap / mag if mag > 0.0 else 0.0
                ftv *= scale
                # slip: re-anchor so the spring alone carries the clamped force
                tx = x - dn * np.array([nx, ny, nz])
                anchors[k] = tx + ftv / kt if kt > 0.0 else tx
            fw = np.array([fn * nx + ftv[0], fn * ny + ftv[1], fn * nz + ftv[2]])
            fb = r.T @ fw
            m0, m1, m2 = _cross(rc[0], rc[1], rc[2], fb[0], fb[1], fb[2])
            fext[b, 0] += m0
            fext[b, 1] += m1
            fext[b, 2] += m2
            fext[b, 3] += fb[0]
            fext[b, 4] += fb[1]
            fext[b, 5] += fb[2]
            points[k, 0] = fn
            points[k, 1] = ftv[0]
            points[k, 2] = ftv[1]
            points[k, 3] = ftv[2]
            fn_sum += fn
            ft += ftv
            cop += fn * x
            nrm_ref[0] += nx
            nrm_ref[1] += ny
            nrm_ref[2] += nz
        summary[f, C_FN] = fn_sum
        summary[f, C_NPTS] = npts
        if npts > 0:
            nn = math.sqrt(nrm_ref[0] ** 2 + nrm_ref[1] ** 2 + nrm_ref[2] ** 2)
            n0, n1, n2 = nrm_ref[0] / nn, nrm_ref[1] / nn, nrm_ref[2] / nn
            # tangent basis: world x projected on the plane, then n x t1
            t0, t1_, t2 = 1.0 - n0 * n0, -n0 * n1, -n0 * n2
            tn = math.sqrt(t0 * t0 + t1_ * t1_ + t2 * t2)
            t0, t1_, t2 = t0 / tn, t1_ / tn, t2 / tn
            s0, s1, s2 = _cross(n0, n1, n2, t0, t1_, t2)
            summary[f, C_FT1] = ft[0] * t0 + ft[1] * t1_ + ft[2] * t2
            summary[f, C_FT2] = ft[0] * s0 + ft[1] * s1 + ft[2] * s2
        else:
            summary[f, C_FT1] = 0.0
            summary[f, C_FT2] = 0.0
        if fn_sum > 0.0:
            summary[f, C_COPX] = cop[0] / fn_sum
            summary[f, C_COPY] = cop[1] / fn_sum
            summary[f, C_COPZ] = cop[2] / fn_sum
        else:
            summary[f, C_COPX] = 0.0
            summary[f, C_COPY] = 0.0
            summary[f, C_COPZ] = 0.0


@njit(cache=True)
def step_kernel(parent, axis, tree_r, mass, com, inertia6, corners, foot_bodies, limits,
                torque_limits, armature, q, v, anchors, active, tau_cmd, kind, tparams, segs, pp, dt,
                ext_force, summary, points, tau_applied):
    """Advance (q, v) in place by one step; returns 1 on divergence, else 0."""
    n = parent.shape[0]
    nj = n - 1
    rot = np.empty((n, 3, 3))
    pos = np.empty((n, 3))
    vel = np.zeros((n, 6))
    xup = np.zeros((n, 6, 6))
    cvec = np.zeros((n, 6))
    forward_pass(parent, axis, tree_r, q, v, rot, pos, vel, xup, cvec)

    fext = np.zeros((n, 6))
    contact_forces(rot, pos, vel, foot_bodies, corners, kind, tparams, segs, pp,
                   anchors, active, fext, summary, points)
    g = pp[P_GRAVITY]
    for b in range(n):
        # gravity acts at the body CoM
        rb = rot[b]
        f0 = -mass[b] * g * rb[2, 0]
        f1 = -mass[b] * g * rb[2, 1]
        f2 = -mass[b] * g * rb[2, 2]
        c = com[b]
        m0, m1, m2 = _cross(c[0], c[1], c[2], f0, f1, f2)
        fext[b, 0] += m0
        fext[b, 1] += m1
        fext[b, 2] += m2
        fext[b, 3] += f0
        fext[b, 4] += f1
        fext[b, 5] += f2
    if ext_force[0] != 0.0 or ext_force[1] != 0.0 or ext_force[2] != 0.0:
        r0 = rot[0]
        fb = r0.T @ ext_force
        c = com[0]
        m0, m1, m2 = _cross(c[0], c[1], c[2], fb[0], fb[1], fb[2])
        fext[0, 0] += m0
        fext[0, 1] += m1
        fext[0, 2] += m2
        fext[0, 3] += fb[0]
        fext[0, 4] += fb[1]
        fext[0, 5] += fb[2]

    ia = inertia6.copy()
    pa = np.empty((n, 6))
    tmp6 = np.empty(6)
    for b in range(n):
        _mv6(inertia6[b], vel[b], tmp6)
        _force_cross(vel[b], tmp6, pa[b])
        for i in range(6):
            pa[b, i] -= fext[b, i]

    # joint torques: commanded (clamped) plus optional soft joint stops
    tau = np.empty(nj)
    for j in range(nj):
        t = tau_cmd[j]
        lim = torque_limits[j]
        if t > lim:
            t = lim
        elif t < -lim:
            t = -lim
        tau_applied[j] = t
        qj = q[7 + j]
        if pp[P_LIMIT_K] > 0.0:
            if qj < limits[j, 0]:
                t += pp[P_LIMIT_K] * (limits[j, 0] - qj) - pp[P_LIMIT_D] * min(v[6 + j], 0.0)
            elif qj > limits[j, 1]:
                t += pp[P_LIMIT_K] * (limits[j, 1] - qj) - pp[P_LIMIT_D] * max(v[6 + j], 0.0)
        tau[j] = t

    u_arr = np.empty(n)
    d_arr = np.empty(n)
    uvec = np.zeros((n, 6))
    iam = np.empty((6, 6))
    tmpm = np.empty((6, 6))
    pam = np.empty(6)
    for b in range(n - 1, 0, -1):
        a = axis[b]
        for i in range(6):
            uvec[b, i] = ia[b, i, a]
        # rotor inertia reflected through the drive adds to the joint-space inertia
        d = uvec[b, a] + armature[b - 1]
        d_arr[b] = d
        u = tau[b - 1] - pa[b, a]
        u_arr[b] = u
        for i in range(6):
            for k in range(6):
                iam[i, k] = ia[b, i, k] - uvec[b, i] * uvec[b, k] / d
        _mv6(iam, cvec[b], pam)
        for i in range(6):
            pam[i] += pa[b, i] + uvec[b, i] * u / d
        p = parent[b]
        _congruence_add(xup[b], iam, ia[p], tmpm)
        _mtv6(xup[b], pam, tmp6)
        for i in range(6):
            pa[p, i] += tmp6[i]

    acc = np.zeros((n, 6))
    if pp[P_FIXED] == 0.0:
        rhs = np.empty(6)
        for i in range(6):
            rhs[i] = -pa[0, i]
        acc[0] = np.linalg.solve(ia[0], rhs)
    qdd = np.empty(nj)
    for b in range(1, n):
        p = parent[b]
        _mv6(xup[b], acc[p], tmp6)
        for i in range(6):
            tmp6[i] += cvec[b, i]
        s = 0.0
        for i in range(6):
            s += uvec[b, i] * tmp6[i]
        qb = (u_arr[b] - s) / d_arr[b]
        qdd[b - 1] = qb
        for i in range(6):
            acc[b, i] = tmp6[i]
        acc[b, axis[b]] += qb

    # semi-implicit Euler
    for j in range(nj):
        v[6 + j] += dt * qdd[j]
        q[7 + j] += dt * v[6 + j]
    if pp[P_FIXED] == 0.0:
        for i in range(6):
            v[i] += dt * acc[0, i]
        r0 = rot[0]
        for i in range(3):
            q[i] += dt * (r0[i, 0] * v[3] + r0[i, 1] * v[4] + r0[i, 2] * v[5])
        _quat_integrate(q[3:7], v[:3], dt)

    for i in range(q.shape[0]):
        if not (abs(q[i]) < DIVERGENCE_BOUND):
            return 1
    for i in range(v.shape[0]):
        if not (abs(v[i]) < DIVERGENCE_BOUND):
            return 1
    return 0


@njit(cache=True)
def mechanical_energy(parent, axis, tree_r, mass, com, inertia6, armature, q, v, gravity):
    n = parent.shape[0]
    rot = np.empty((n, 3, 3))
    pos = np.empty((n, 3))
    vel = np.zeros((n, 6))
    xup = np.zeros((n, 6, 6))
    cvec = np.zeros((n, 6))
    forward_pass(parent, axis, tree_r, q, v, rot, pos, vel, xup, cvec)
    kin = 0.0
    pot = 0.0
    tmp = np.empty(6)
    for b in range(n):
        _mv6(inertia6[b], vel[b], tmp)
        for i in range(6):
            kin += 0.5 * vel[b, i] * tmp[i]
        cz = pos[b, 2] + rot[b, 2, 0] * com[b, 0] + rot[b, 2, 1] * com[b, 1] + rot[b, 2, 2] * com[b, 2]
        pot += mass[b] * gravity * cz
    for j in range(armature.shape[0]):
        kin += 0.5 * armature[j] * v[6 + j] ** 2
    return kin + pot


# ---------------------------------------------------------------------------
# python-facing api


class Simulator:
    """Reusable binding of model, terrain and physics parameters."""

    def __init__(self, model: RobotModel, terrain: Terrain, params: PhysicsParams = PhysicsParams()):
        self.model = model
        self.terrain = terrain
        self.params = params
        self.arrays = model.arrays()
        self.kind, self.tparams, self.segs = terrain.encode()
        self.pp = params.vector(terrain.friction_coefficient)
        self.foot_bodies = np.array([6, 12], dtype=np.int64)

    def step(self, state: SimState, torques, dt=None, external_force=None):
        dt = self.params.dt if dt is None else dt
        if not 0 < dt <= 0.002:
            raise ValueError("dt must lie in (0, 0.002]")
        torques = np.asarray(torques, dtype=float)
        if torques.shape != (N_JOINTS,):
            raise ValueError("expected 12 joint torques")
        new = state.copy()
        summary = np.zeros((2, 7))
        points = np.zeros((N_CONTACTS, 4))
        applied = np.zeros(N_JOINTS)
        ext = np.zeros(3) if external_force is None else np.asarray(external_force, dtype=float)
        a = self.arrays
        status = step_kernel(a.parent, a.axis, a.tree_r, a.mass, a.com, a.inertia6, a.corners,
                             self.foot_bodies, a.limits, a.torque_limits, a.armature, new.q, new.v,
                             new.anchors, new.anchor_active, torques, self.kind, self.tparams,
                             self.segs, self.pp, float(dt), ext, summary, points, applied)
        new.time = state.time + dt
        if status:
            raise Diverged(new)
        return new, ContactReport.from_arrays(summary, points)

    def energy(self, state: SimState) -> float:
        a = self.arrays
        return mechanical_energy(a.parent, a.axis, a.tree_r, a.mass, a.com, a.inertia6, a.armature,
                                 state.q, state.v, self.params.gravity)


def step(model: RobotModel, state: SimState, torques, terrain: Terrain, dt: float,
         params: PhysicsParams | None = None):
    """One physics tick; returns (new state, contact report)."""
    params = PhysicsParams() if params is None else params
    return Simulator(model, terrain, params).step(state, torques, dt)
