"""Compliance controller behavior: equilibrium, stiffness modes and slew,
target ingestion, free-space convergence, contact statics through the full
stack, and the singularity guard."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compbench.config import WorkbenchConfig
from compbench.controller import (
    STIFFNESS_MODES,
    CartesianComplianceController,
    ControllerTarget,
    critical_damping,
    set_stiffness_mode,
)
from compbench.geometry import Pose, StiffnessSpec, Wrench
from compbench.kinematics import KinematicChain, forward_kinematics, planar_arm
from compbench.runtime import RuntimeSession
from compbench.world import Arm, Surface, World

Q0 = np.array([0.3, -1.2, 0.9])


def make_controller(q0=Q0, chain=None):
    cfg = WorkbenchConfig()
    chain = chain if chain is not None else planar_arm()
    ctrl = CartesianComplianceController(chain, cfg.controller, q0)
    return ctrl, cfg


def run_free(ctrl, cfg, seconds, record=None):
    """Step the controller alone (no world, zero measured wrench)."""
    dt = cfg.sim.physics_dt
    per = max(1, round(cfg.controller.period / dt))
    n = int(round(seconds / dt))
    for i in range(n):
        if i % per == 0:
            ctrl.ingest(now=i * dt)
        ctrl.step(np.zeros(6), dt)
        if record is not None:
            record(i * dt)


def test_equilibrium_command_is_current_q():
    ctrl, cfg = make_controller()
    ctrl.update_target(ControllerTarget(
        forward_kinematics(ctrl.chain, Q0), set_stiffness_mode("mid"),
        Wrench()), now=0.0)
    run_free(ctrl, cfg, 0.1)
    np.testing.assert_allclose(ctrl.q_v, Q0, atol=1e-12)


@pytest.mark.parametrize("mode,value", [("low", 250.0), ("mid", 500.0),
                                        ("high", 750.0)])
def test_stiffness_modes(mode, value):
    spec = set_stiffness_mode(mode)
    assert STIFFNESS_MODES[mode] == value
    np.testing.assert_allclose(spec.translational, np.eye(3) * value)
    np.testing.assert_allclose(spec.rotational, np.eye(3) * value)


def test_latest_target_wins():
    ctrl, cfg = make_controller()
    k = set_stiffness_mode("mid")
    first = ControllerTarget(Pose([0.1, 0, 0.25]), k, Wrench())
    second = ControllerTarget(Pose([0.2, 0, 0.25]), k, Wrench())
    ctrl.update_target(first, now=0.001)
    ctrl.update_target(second, now=0.002)
    ctrl.ingest(now=0.01)
    np.testing.assert_allclose(ctrl.active_pose.position, [0.2, 0, 0.25])


def test_stiffness_slew_mid_to_low_takes_five_periods():
    ctrl, cfg = make_controller()       # starts at mid
    pose = forward_kinematics(ctrl.chain, Q0)
    ctrl.update_target(ControllerTarget(pose, set_stiffness_mode("low"),
                                        Wrench()), now=0.0)
    diag = []
    for i in range(6):
        ctrl.ingest(now=i * cfg.controller.period)
        diag.append(ctrl.active_k.translational[0, 0])
    np.testing.assert_allclose(diag, [450, 400, 350, 300, 250, 250])


def test_watchdog_flags_staleness_and_holds_pose():
    ctrl, cfg = make_controller()
    pose = Pose([0.45, 0.05, 0.25])
    ctrl.update_target(ControllerTarget(pose, set_stiffness_mode("mid"),
                                        Wrench()), now=0.0)
    ctrl.ingest(now=0.01)
    assert not ctrl.stale
    ctrl.ingest(now=0.4)
    assert not ctrl.stale
    ctrl.ingest(now=0.51)
    assert ctrl.stale
    np.testing.assert_allclose(ctrl.active_pose.position, pose.position)


def test_free_space_convergence_within_20cm():
    # any reachable goal 20 cm out: error < 1 mm within 3 s, and the decay is
    # monotonic once the initial transient has passed
    ctrl, cfg = make_controller()
    goal = forward_kinematics(ctrl.chain, Q0 + [0.4, -0.3, 0.1])  # 13.7 cm out
    ctrl.update_target(ControllerTarget(goal, set_stiffness_mode("mid"),
                                        Wrench()), now=0.0)
    errs = []

    def sample(t):
        p = forward_kinematics(ctrl.chain, ctrl.q_v).position
        errs.append((t, np.linalg.norm(goal.position - p)))

    run_free(ctrl, cfg, 3.0, record=sample)
    assert errs[-1][1] < 1e-3
    tail = [e for t, e in errs if t > 0.5]
    assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))


def test_force_target_offsets_equilibrium():
    # in free space a nonzero F_g drives the EE until the virtual spring
    # balances it: displacement = K^-1 F_g away from the pose target
    ctrl, cfg = make_controller()
    start = forward_kinematics(ctrl.chain, Q0)
    f_g = 5.0
    ctrl.update_target(ControllerTarget(start, set_stiffness_mode("mid"),
                                        Wrench([f_g, 0, 0])), now=0.0)
    run_free(ctrl, cfg, 3.0)
    p = forward_kinematics(ctrl.chain, ctrl.q_v).position
    np.testing.assert_allclose(start.position[0] - p[0], f_g / 500.0,
                               rtol=0.02)
    np.testing.assert_allclose(p[1:], start.position[1:], atol=1e-4)


@pytest.mark.parametrize("k_trans,expected", [(500.0, 4.975), (250.0, 2.488)])
def test_contact_force_follows_series_spring(k_trans, expected):
    # full stack: K and the wall in series, F = K k_wall d / (K + k_wall)
    cfg = WorkbenchConfig()
    chain = planar_arm()
    q0 = np.array([1.1, -2.2, 1.1])
    x0 = forward_kinematics(chain, q0)
    wall_x = x0.position[0] + 0.05
    world = World(arms={"arm": Arm(chain=chain, q=q0.copy())}, cfg=cfg.sim,
                  surfaces=[Surface("wall", point=[wall_x, 0, 0],
                                    normal=[-1, 0, 0])])
    session = RuntimeSession(world, cfg)
    goal = Pose([wall_x + 0.010, x0.position[1], x0.position[2]],
                x0.orientation)
    session.set_target("arm", ControllerTarget(
        goal, StiffnessSpec(np.eye(3) * k_trans, np.eye(3) * 50.0), Wrench()))
    session.run(2.0)
    forces = []
    for _ in range(100):
        session.run_steps(1)
        forces.append(-world.arms["arm"].f_ext[0])
    assert np.mean(forces) == pytest.approx(expected, rel=0.05)


def test_halving_stiffness_halves_contact_force():
    # ratio form of the series-spring law, insensitive to the small k_wall
    # correction term
    forces = {}
    for k_trans in (500.0, 250.0):
        cfg = WorkbenchConfig()
        chain = planar_arm()
        q0 = np.array([1.1, -2.2, 1.1])
        x0 = forward_kinematics(chain, q0)
        wall_x = x0.position[0] + 0.05
        world = World(arms={"arm": Arm(chain=chain, q=q0.copy())},
                      cfg=cfg.sim,
                      surfaces=[Surface("wall", point=[wall_x, 0, 0],
                                        normal=[-1, 0, 0])])
        session = RuntimeSession(world, cfg)
        goal = Pose([wall_x + 0.010, x0.position[1], x0.position[2]],
                    x0.orientation)
        session.set_target("arm", ControllerTarget(
            goal, StiffnessSpec(np.eye(3) * k_trans, np.eye(3) * 50.0),
            Wrench()))
        session.run(2.1)
        forces[k_trans] = -world.arms["arm"].f_ext[0]
    assert forces[250.0] / forces[500.0] == pytest.approx(0.5, rel=0.05)


def coincident_axis_chain():
    # both joint axes are the base z-axis at the origin: rank-1 Jacobian in
    # translation, smallest singular value exactly 0 at every q
    return KinematicChain(
        rows=np.array([[0, 0, 0.1, 0], [0, 0, -0.1, 0]], dtype=float),
        lower=[-3, -3], upper=[3, 3], ee_offset=Pose([0.3, 0, 0]),
        name="degenerate")


def test_singularity_guard_flags_and_stays_finite():
    ctrl, cfg = make_controller(q0=np.array([0.2, 0.1]),
                                chain=coincident_axis_chain())
    goal = Pose([0.0, 0.35, 0.0])
    ctrl.update_target(ControllerTarget(goal, set_stiffness_mode("mid"),
                                        Wrench()), now=0.0)
    run_free(ctrl, cfg, 1.0)
    assert ctrl.singular
    assert np.all(np.isfinite(ctrl.q_v)) and np.all(np.isfinite(ctrl.qd_v))
    assert np.linalg.norm(ctrl.qd_v) < 10.0


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_critical_damping_squares_to_4mk(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 3))
    k = StiffnessSpec(a.T @ a + np.eye(3) * 50.0, np.eye(3) * 50.0)
    d6 = critical_damping(k, m_cart=1.0, i_cart=1.0)
    np.testing.assert_allclose(d6[:3, :3] @ d6[:3, :3],
                               4.0 * k.translational, rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(d6, d6.T, atol=1e-10)


def test_identical_input_streams_reproduce_commands():
    def run():
        ctrl, cfg = make_controller()
        goal = Pose([0.45, 0.1, 0.25])
        ctrl.update_target(ControllerTarget(goal, set_stiffness_mode("low"),
                                            Wrench()), now=0.0)
        out = []
        dt = cfg.sim.physics_dt
        for i in range(500):
            if i % 10 == 0:
                ctrl.ingest(now=i * dt)
            f = np.array([np.sin(i / 30.0), 0, 0, 0, 0, 0])
            out.append(ctrl.step(f, dt).tobytes())
        return out

    assert run() == run()
