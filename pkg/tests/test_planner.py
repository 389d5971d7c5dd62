import math

import numpy as np
import pytest

from qpik.chain import BIG, CompositeChain, JointSpec, KinematicChain, Pose, SpatialVelocity, data_path, load_chain
from qpik.collision import CollisionTree, CollisionVolume, CollisionWorld, Halfspace, Sphere, world_min_distance
from qpik.planner import (
    Planner,
    PlannerConfig,
    TrajectorySample,
    Waypoint,
    assemble_qp,
    interpolate,
    merged_bounds,
    plan,
    step,
    versine_ramp,
)
from qpik.qp import QPStatus
from qpik.scenarios import load_scenario
from qpik.transforms import rotvec_to_matrix

HOME = np.array([0.0, 0.26, np.pi, -2.27, 0.0, 0.96, np.pi / 2])


@pytest.fixture(scope="module")
def gen3():
    return load_chain(data_path("gen3.chain"))


def empty_world():
    return CollisionWorld([])


def hold_sample(comp, q):
    return TrajectorySample.from_poses(0.0, comp.ee_poses(q), [SpatialVelocity.zero()] * len(comp.chains))


# -- versine ramp ------------------------------------------------------------------


def test_versine_boundaries_and_midpoint():
    assert versine_ramp(0.0, 5.0) == (0.0, 0.0)
    s, sd = versine_ramp(5.0, 5.0)
    assert abs(s - 1.0) < 1e-15 and abs(sd) < 1e-15
    s, sd = versine_ramp(2.5, 5.0)
    assert abs(s - 0.5) < 1e-15 and abs(sd - 2 / 5.0) < 1e-15


def test_versine_out_of_range():
    with pytest.raises(ValueError):
        versine_ramp(-1e-9, 1.0)
    with pytest.raises(ValueError):
        versine_ramp(1.0 + 1e-9, 1.0)
    with pytest.raises(ValueError):
        versine_ramp(0.0, 0.0)


def test_versine_monotone_and_derivative():
    T, dt = 5.0, 0.002
    t = np.arange(0, int(T / dt) + 1) * dt
    t[-1] = T
    s = np.array([versine_ramp(x, T)[0] for x in t])
    sd = np.array([versine_ramp(x, T)[1] for x in t])
    assert np.all(np.diff(s) >= 0) and np.all(sd >= 0)
    fd = np.gradient(s, dt)
    assert np.abs(fd[1:-1] - sd[1:-1]).max() <= 1e-6


# -- interpolation -----------------------------------------------------------------


def test_interpolate_endpoints():
    start = Pose([0, 0, 0])
    goal = Pose.from_matrix(rotvec_to_matrix(np.array([0.0, 0.4, 0.0])), [1.0, 0.0, 0.0])
    wp = Waypoint(goal, 5.0)
    x, v = interpolate(start, wp, 0.0)
    np.testing.assert_allclose(x.position, 0, atol=1e-15)
    np.testing.assert_allclose(v.as_vector(), 0, atol=1e-15)
    x, v = interpolate(start, wp, 5.0)
    np.testing.assert_allclose(x.position, goal.position, atol=1e-15)
    np.testing.assert_allclose(x.rotation, goal.rotation, atol=1e-15)
    np.testing.assert_allclose(v.as_vector(), 0, atol=1e-15)


def test_interpolate_peak_speed():
    wp = Waypoint(Pose([1.0, 0.0, 0.0]), 5.0)
    _, v = interpolate(Pose([0, 0, 0]), wp, 2.5)
    np.testing.assert_allclose(v.linear, [0.4, 0, 0], atol=1e-15)


def test_interpolated_velocity_matches_finite_difference():
    start = Pose.from_matrix(rotvec_to_matrix(np.array([0.3, -0.2, 0.1])), [0.2, 0.1, 0.5])
    goal = Pose.from_matrix(rotvec_to_matrix(np.array([-1.0, 0.8, 0.4])), [-0.3, 0.4, 0.2])
    wp = Waypoint(goal, 3.0)
    h = 1e-6
    for t in np.linspace(0.1, 2.9, 15):
        xm, _ = interpolate(start, wp, t - h)
        xp, _ = interpolate(start, wp, t + h)
        _, v = interpolate(start, wp, t)
        np.testing.assert_allclose((xp.position - xm.position) / (2 * h), v.linear, atol=1e-7)
        W = (xp.rotation - xm.rotation) / (2 * h) @ interpolate(start, wp, t)[0].rotation.T
        np.testing.assert_allclose([W[2, 1], W[0, 2], W[1, 0]], v.angular, atol=1e-7)


def test_waypoint_duration_positive():
    with pytest.raises(ValueError):
        Waypoint(Pose([0, 0, 0]), 0.0)


# -- configuration -----------------------------------------------------------------


def test_config_defaults_and_validation(gen3):
    cfg = PlannerConfig()
    assert cfg.d_act == pytest.approx(cfg.d_buff + 0.10)
    np.testing.assert_array_equal(cfg.gamma_matrix(), np.eye(6))
    comp = CompositeChain([gen3])
    cfg.validate(comp)
    for bad in (dict(dt=0.0), dict(lam=0.0), dict(d_buff=0.1, d_act=0.05), dict(delta_q=0.01), dict(gamma=-1.0)):
        with pytest.raises(ValueError):
            PlannerConfig(**bad).validate(comp)
    with pytest.raises(ValueError):
        PlannerConfig(gamma=np.ones(4))


# -- assembly --------------------------------------------------------------------------


def test_h_and_g_without_collisions(gen3):
    comp = CompositeChain([gen3])
    cfg = PlannerConfig(gamma=0.0, lam=1.0)
    v = SpatialVelocity([0.1, -0.2, 0.05], [0.0, 0.3, 0.0])
    sample = TrajectorySample.from_poses(0.0, comp.ee_poses(HOME), [v])
    prob, pairs = assemble_qp(comp, empty_world(), HOME, sample, cfg)
    from qpik.chain import geometric_jacobian

    J = geometric_jacobian(gen3, HOME)
    np.testing.assert_allclose(prob.H, J.T @ J + np.eye(7), atol=1e-13)
    np.testing.assert_allclose(prob.g, -J.T @ v.as_vector(), atol=1e-13)
    assert prob.m == 0 and pairs == ()


def test_drift_term_is_task_space_penalty(gen3):
    comp = CompositeChain([gen3])
    G = np.diag([2.0, 3.0, 4.0, 0.5, 0.6, 0.7])
    cfg = PlannerConfig(gamma=G, lam=1e-3)
    x_d = Pose.from_matrix(rotvec_to_matrix(np.array([0.02, -0.01, 0.03])), comp.ee_poses(HOME)[0].position + [0.01, 0.0, -0.02])
    v = SpatialVelocity([0.1, 0.0, 0.0], [0.0, 0.0, 0.2])
    sample = TrajectorySample.from_poses(0.0, [x_d], [v])
    prob, _ = assemble_qp(comp, empty_world(), HOME, sample, cfg)
    from qpik.chain import geometric_jacobian, pose_error

    J = geometric_jacobian(gen3, HOME)
    e = pose_error(comp.ee_poses(HOME)[0], x_d)
    dt = cfg.dt
    rng = np.random.default_rng(0)
    # the QP objective equals the stated cost up to a constant
    def cost(a):
        r1 = v.as_vector() - J @ a
        r2 = e + dt * J @ a
        return 0.5 * (r1 @ r1 + r2 @ G @ r2 + cfg.lam * a @ a)

    base = cost(np.zeros(7))
    for _ in range(10):
        a = rng.standard_normal(7)
        assert abs(prob.objective(a) - (cost(a) - base)) <= 1e-9 * (1 + abs(cost(a)))


def test_merged_bounds_at_limit(gen3):
    comp = CompositeChain([gen3])
    q = HOME.copy()
    q[1] = gen3.q_lb[1]
    lb, ub = merged_bounds(comp, q, 0.002)
    assert lb[1] == 0.0 and ub[1] == 1.39
    assert lb[0] == -1.39 and ub[0] == 1.39
    q[3] = gen3.q_ub[3] - 0.001
    lb, ub = merged_bounds(comp, q, 0.002)
    assert ub[3] == pytest.approx(0.5)


def test_collision_row_at_buffer(gen3):
    j = JointSpec("j", (0, 1, 0), Pose.identity(), -BIG, BIG, -1, 1)
    # tilted so the tip sits at z = 0.1 with a nonzero clearance gradient
    qa = 0.5
    ch = KinematicChain("pend", [j], base_transform=Pose([0, 0, 0.1 + 0.4 * np.cos(qa)]), tool_transform=Pose([0, 0, -0.4]))
    comp = CompositeChain([ch])
    arm = CollisionTree("arm", [CollisionVolume(Sphere(0.05), 2)], owner=0)
    floor = CollisionTree("floor", [CollisionVolume(Halfspace([0, 0, 1]))])
    world = CollisionWorld([arm, floor])
    cfg = PlannerConfig(d_buff=0.05, d_act=0.15)
    q = np.array([qa])
    # clearance 0.05 = d_buff
    prob, pairs = assemble_qp(comp, world, q, hold_sample(comp, q), cfg)
    assert prob.m == 1 and abs(prob.lbA[0]) < 1e-15 and prob.ubA[0] == 1e10
    literal, _ = assemble_qp(comp, world, q, hold_sample(comp, q), PlannerConfig(d_buff=0.05, d_act=0.15, literal_eq12=True))
    assert abs(literal.lbA[0] - 0.05) < 1e-15
    assert np.all(prob.A != 0)


def test_hessian_positive_definite(gen3):
    comp = CompositeChain([gen3])
    cfg = PlannerConfig(gamma=250000.0)
    rng = np.random.default_rng(1)
    for _ in range(50):
        q = rng.uniform(np.maximum(gen3.q_lb, -3), np.minimum(gen3.q_ub, 3))
        prob, _ = assemble_qp(comp, empty_world(), q, hold_sample(comp, q), cfg)
        assert np.linalg.eigvalsh(prob.H).min() >= cfg.lam - 1e-12 * np.abs(prob.H).max()


# -- stepping ----------------------------------------------------------------------


def test_stationary_target_is_fixed_point(gen3):
    comp = CompositeChain([gen3])
    planner = Planner(comp, empty_world(), PlannerConfig())
    q = HOME.copy()
    sample = hold_sample(comp, q)
    for _ in range(50):
        res = planner.step(q, sample)
        assert res.status is QPStatus.SOLVED
        assert np.abs(res.qd_d).max() <= 1e-8
        q = res.q_d


def test_one_dof_closed_form():
    j = JointSpec("j", (0, 0, 1), Pose.identity(), -BIG, BIG, -10, 10)
    ch = KinematicChain("one", [j], tool_transform=Pose([0.5, 0, 0]))
    comp = CompositeChain([ch])
    omega = 0.7
    for lam in (1.0, 1e-2, 1e-4):
        cfg = PlannerConfig(gamma=0.0, lam=lam)
        # ee velocity for rotation rate omega: linear (0, 0.5 omega, 0), angular (0, 0, omega)
        v = SpatialVelocity([0.0, 0.5 * omega, 0.0], [0, 0, omega])
        sample = TrajectorySample.from_poses(0.0, comp.ee_poses([0.0]), [v])
        res = step(np.array([0.0]), sample, comp, CollisionWorld([]), cfg)
        n2 = 0.25 + 1.0
        assert abs(res.qd_d[0] - omega * n2 / (n2 + lam)) <= 1e-12


def test_integration_rule_is_exact(gen3):
    comp = CompositeChain([gen3])
    planner = Planner(comp, empty_world(), PlannerConfig(gamma=250000.0))
    q = HOME.copy()
    target = Pose(comp.ee_poses(q)[0].position + [0.0, 0.1, -0.05], comp.ee_poses(q)[0].orientation)
    sample = TrajectorySample.from_poses(0.0, [target], [SpatialVelocity.zero()])
    res = planner.step(q, sample)
    assert np.array_equal(res.q_d, q + 0.002 * res.qd_d)
    assert np.all(res.qd_d <= comp.qd_ub + 1e-8) and np.all(res.qd_d >= comp.qd_lb - 1e-8)


def test_unconstrained_step_reduces_task_error(gen3):
    comp = CompositeChain([gen3])
    cfg = PlannerConfig(gamma=250000.0)
    planner = Planner(comp, empty_world(), cfg)
    rng = np.random.default_rng(2)
    from qpik.chain import pose_error

    for _ in range(300):
        q = rng.uniform(np.maximum(gen3.q_lb, -3), np.minimum(gen3.q_ub, 3)) * 0.8
        x = comp.ee_poses(q)[0]
        off = rng.standard_normal(3) * 5e-4
        target = Pose(x.position + off, x.orientation)
        sample = TrajectorySample.from_poses(0.0, [target], [SpatialVelocity.zero()])
        res = planner.step(q, sample)
        before = np.linalg.norm(pose_error(x, target))
        after = np.linalg.norm(pose_error(comp.ee_poses(res.q_d)[0], target))
        assert after <= before + 1e-12
        planner.reset()


def test_halt_result_on_infeasible():
    # a sphere on a pendulum held below the buffer with every joint frozen
    j = JointSpec("j", (0, 1, 0), Pose.identity(), -BIG, BIG, -1, 1)
    # tilted so the tip sits at z = 0.1 with a nonzero clearance gradient
    qa = 0.5
    ch = KinematicChain("pend", [j], base_transform=Pose([0, 0, 0.1 + 0.4 * np.cos(qa)]), tool_transform=Pose([0, 0, -0.4]))
    comp = CompositeChain([ch])
    arm = CollisionTree("arm", [CollisionVolume(Sphere(0.05), 2)], owner=0)
    floor = CollisionTree("floor", [CollisionVolume(Halfspace([0, 0, 1], 0.04))])
    world = CollisionWorld([arm, floor])
    # straight down: clearance 0.01 < d_buff, and at q = 0 the gradient vanishes (dropped row)
    # so tilt slightly and demand more recovery than one tick allows
    cfg = PlannerConfig(d_buff=0.05, d_act=0.15)
    q = np.array([0.01])
    res = step(q, hold_sample(comp, q), comp, world, cfg)
    assert res.status is QPStatus.INFEASIBLE
    assert res.halted and np.all(res.qd_d == 0.0) and np.array_equal(res.q_d, q)


# -- plan ----------------------------------------------------------------------------


def test_zero_waypoints(gen3):
    log = plan(CompositeChain([gen3]), empty_world(), HOME, [], PlannerConfig())
    assert len(log) == 0


def test_reachable_waypoint_converges(gen3):
    comp = CompositeChain([gen3])
    x0 = comp.ee_poses(HOME)[0]
    goal = Pose.from_matrix(rotvec_to_matrix(np.array([0.0, 0.0, 0.3])) @ x0.rotation, x0.position + [-0.05, 0.15, 0.1])
    log = plan(comp, empty_world(), HOME, [Waypoint(goal, 15.0)], PlannerConfig(gamma=250000.0))
    assert len(log) == 7500
    assert np.allclose(np.diff(log.t), 0.002)
    e = log.waypoint_errors[0][0]
    assert np.linalg.norm(e[:3]) <= 1e-3 and np.linalg.norm(e[3:]) <= 1e-2


def test_waypoint_inside_obstacle_buffer():
    cfg = load_scenario("s2_sphere")
    comp, world = cfg.composite(), cfg.world()
    x0 = comp.ee_poses(cfg.q0)[0]
    obstacle = np.array([-0.25, 0.2, 0.5])
    log = plan(comp, world, cfg.q0, [Waypoint(Pose(obstacle, x0.orientation), 5.0)], cfg.planner)
    assert log.halted_ticks == 0
    assert log.min_dist.min() >= cfg.planner.d_buff - 1e-3
    final = comp.ee_poses(log.q[-1])[0]
    assert np.linalg.norm(final.position - obstacle) > 0.1


def test_planner_rejects_bad_segment(gen3):
    comp = CompositeChain([gen3, gen3])
    wp = Waypoint(Pose([0.4, 0, 0.4]), 1.0)
    with pytest.raises(ValueError):
        plan(comp, empty_world(), np.concatenate([HOME, HOME]), [(wp,)], PlannerConfig())
