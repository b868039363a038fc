import math

import numpy as np
import pytest

from gaitforge.gait import GaitParams
from gaitforge.physics import Diverged, PhysicsParams, SimState, Simulator, step
from gaitforge.robot_model import BasePose, RobotModel, forward_kinematics
from gaitforge.rollout import standing_state
from gaitforge.terrain import Terrain

MODEL = RobotModel()
# joint-space PD that holds a pose; ankle gains stay low enough for explicit damping
HOLD_KP = np.array((3000.0, 3000.0, 3000.0, 3000.0, 2000.0, 2000.0) * 2)
HOLD_KD = np.array((60.0, 60.0, 60.0, 60.0, 5.0, 5.0) * 2)


def free_state(scale=1.0, seed=0):
    rng = np.random.default_rng(seed)
    return SimState.from_pose(BasePose(z=5.0, roll=0.1, pitch=0.2),
                              joints=rng.uniform(-0.3, 0.3, 12), base_lin_vel=(0.3, 0.1, 0.2),
                              euler_rate=scale * np.array((0.5, -0.3, 0.2)),
                              joint_vel=scale * rng.uniform(-2, 2, 12))


def hold_stand(terrain=Terrain(), seconds=1.0, physics=PhysicsParams()):
    state, _ = standing_state(MODEL, GaitParams(), terrain, lateral_sway=False)
    sim = Simulator(MODEL, terrain, physics)
    q0 = state.joints.copy()
    s, rep = state, None
    for _ in range(int(round(seconds / physics.dt))):
        s, rep = sim.step(s, HOLD_KP * (q0 - s.joints) - HOLD_KD * s.joint_vel)
    return s, rep


def test_free_fall_velocity_step():
    s0 = SimState.from_pose(BasePose(z=5.0))
    s1, rep = step(MODEL, s0, np.zeros(12), Terrain(), 0.001)
    assert s1.base_lin_vel[2] - s0.base_lin_vel[2] == pytest.approx(-9.81 * 0.001, abs=1e-12)
    assert rep.normal_forces.sum() == 0.0


def test_static_stand_carries_weight():
    s, rep = hold_stand()
    assert rep.normal_forces.sum() == pytest.approx(48 * 9.81, rel=0.01)
    # penetration of the sole below the ground
    depth = -forward_kinematics(MODEL, s.base, s.joints, "foot_L").translation[2]
    assert 0.0 < depth < 0.002


def test_single_link_pendulum_period():
    # left hip pitch free, every other joint locked, base fixed in the air
    sim = Simulator(MODEL, Terrain(), PhysicsParams(fixed_base=True))
    kp = np.array((2e4, 2000.0, 0.0, 2e4, 2000.0, 2000.0) * 2)
    kd = np.array((100.0, 10.0, 0.0, 100.0, 5.0, 5.0) * 2)
    q = np.zeros(12)
    q[2] = 0.02
    s = SimState.from_pose(BasePose(z=3.0), q)
    crossings, prev = [], s.joints[2]
    for _ in range(10000):
        s, _ = sim.step(s, -kp * s.joints - kd * s.joint_vel)
        if prev < 0.0 <= s.joints[2]:
            crossings.append(s.time - s.joints[2] / s.joint_vel[2])
        prev = s.joints[2]
    # compound pendulum: thigh, shank, ankle link and foot about the hip pitch axis
    m = np.array(MODEL.link_masses[2:])
    d = np.array([0.17, 0.4 + 0.18, 0.8, 0.83])
    iyy = np.array([i[1] for i in MODEL.link_inertias[2:]])
    inertia = np.sum(iyy + m * d ** 2) + MODEL.joint_armature[2]
    period = 2 * math.pi * math.sqrt(inertia / (np.sum(m * d) * 9.81))
    assert len(crossings) >= 3
    assert np.mean(np.diff(crossings)) == pytest.approx(period, rel=0.01)


def test_passive_energy_drift():
    sim = Simulator(MODEL, Terrain(), PhysicsParams(gravity=0.0))
    s = free_state(scale=0.5)
    e0 = sim.energy(s)
    for _ in range(2000):
        s, _ = sim.step(s, np.zeros(12))
    assert abs(sim.energy(s) - e0) / e0 < 1e-3


def test_energy_drift_is_first_order_in_dt():
    drifts = []
    for dt in (5e-4, 2.5e-4):
        sim = Simulator(MODEL, Terrain(), PhysicsParams(gravity=0.0, dt=dt))
        s = free_state()
        e0 = sim.energy(s)
        for _ in range(int(round(0.5 / dt))):
            s, _ = sim.step(s, np.zeros(12))
        drifts.append(abs(sim.energy(s) - e0))
    assert drifts[0] / drifts[1] == pytest.approx(2.0, rel=0.1)


def test_step_is_deterministic():
    sim = Simulator(MODEL, Terrain("slope", alpha=0.1))
    a = b = standing_state(MODEL, GaitParams(), Terrain("slope", alpha=0.1))[0]
    tau = np.linspace(-20, 20, 12)
    for _ in range(300):
        a, ra = sim.step(a, tau)
        b, rb = sim.step(b, tau)
    assert a.q.tobytes() == b.q.tobytes() and a.v.tobytes() == b.v.tobytes()
    assert ra.point_forces.tobytes() == rb.point_forces.tobytes()


def test_input_state_is_not_mutated():
    s0 = free_state()
    q = s0.q.copy()
    Simulator(MODEL, Terrain()).step(s0, np.zeros(12))
    assert np.array_equal(s0.q, q)


def test_friction_cone_on_steep_slope():
    terrain = Terrain("slope", alpha=math.radians(25), friction_coefficient=0.3)
    state, _ = standing_state(MODEL, GaitParams(), terrain, lateral_sway=False)
    sim = Simulator(MODEL, terrain)
    s, q0 = state, state.joints.copy()
    for _ in range(1000):
        s, rep = sim.step(s, HOLD_KP * (q0 - s.joints) - HOLD_KD * s.joint_vel)
        fn = rep.point_forces[:, 0]
        ft = np.linalg.norm(rep.point_forces[:, 1:], axis=1)
        assert np.all(ft <= 0.3 * fn + 1e-6)


def test_torques_are_clamped():
    sim = Simulator(MODEL, Terrain(), PhysicsParams(fixed_base=True))
    s0 = SimState.from_pose(BasePose(z=3.0))
    big, _ = sim.step(s0, np.full(12, 5000.0))
    lim, _ = sim.step(s0, np.array(MODEL.torque_limits))
    assert np.array_equal(big.v, lim.v)


def test_diverged():
    s = SimState.from_pose(BasePose(z=1.0), base_lin_vel=(3e9, 0.0, 0.0))
    with pytest.raises(Diverged) as info:
        Simulator(MODEL, Terrain()).step(s, np.zeros(12))
    assert isinstance(info.value.state, SimState)


def test_bad_dt():
    with pytest.raises(ValueError):
        Simulator(MODEL, Terrain()).step(free_state(), np.zeros(12), dt=0.01)
