import math
from dataclasses import replace

import numpy as np
import pytest
from conftest import smooth_trajectory
from oracles import actuator_work, homogeneous_tcp, mechanical_energy

from emla_design import closed_chain as cc
from emla_design.errors import ConfigurationError, RangeError
from emla_design.planar_dynamics import (
    CLOSED_CHAIN,
    FIXED,
    TELESCOPE,
    Joint,
    LinkBody,
    RobotModel,
    body_poses,
    evaluate_dynamics,
    inverse_dynamics,
    jacobian_dot,
    joint_torques,
    mass_matrix,
    structure_polyline,
    tcp_jacobian,
    tcp_pose,
)

# L = L1 = 1 and q = -2 pi / 3 give k1 = -1 / cos(pi / 3) = -2 rad/m
K1_CHAIN = cc.ClosedChainParams.from_mounts(1.0, 1.0, Lc=0.5, Lc0=0.9, base_angle=2 * math.pi / 3, rod_angle=0.0)


def single_link(mass=10.0, length=2.0, tcp=(0.0, 0.0)):
    link = LinkBody(mass, com=(length / 2, 0.0), inertia=mass * length**2 / 12, length=length)
    return RobotModel((Joint("arm", CLOSED_CHAIN, link, chain=K1_CHAIN, emla=0),), tcp_offset=tcp)


def test_single_joint_pose():
    r = single_link(tcp=(1.5, 0.0))
    pose = tcp_pose(r, [math.pi / 2])
    np.testing.assert_allclose(pose.position, [0.0, 1.5], atol=1e-15)
    assert pose.orientation == pytest.approx(math.pi / 2)


def test_straight_chain_pose():
    link = LinkBody(1.0)
    chain = cc.ClosedChainParams.from_mounts(1.0, 1.0, 0.5, 0.9, 2 * math.pi / 3, 0.0)
    r = RobotModel((
        Joint("a", CLOSED_CHAIN, link, chain=chain, emla=0),
        Joint("b", CLOSED_CHAIN, link, origin=(1.0, 0.0), chain=chain, emla=1),
        Joint("c", TELESCOPE, link, origin=(1.0, 0.0), emla=2),
    ), tcp_offset=(1.0, 0.0))
    pose = tcp_pose(r, [0.0, 0.0, 0.0])
    np.testing.assert_allclose(pose.position, [3.0, 0.0], atol=1e-15)
    assert pose.orientation == 0.0


def test_static_virtual_work_example():
    r = single_link()
    tau = joint_torques(r, [0.0], [0.0], [0.0])
    assert tau[0] == pytest.approx(98.1, rel=1e-12)
    assert cc.k_coefficients(K1_CHAIN, cc.actuator_from_angle(K1_CHAIN, 0.0))[0] == pytest.approx(-2.0, rel=1e-12)
    f, v = inverse_dynamics(r, [0.0], [0.0], [0.0])
    # k1 is negative for every assembled chain, so the holding force is -196.2 N
    assert f[0] == pytest.approx(-196.2, rel=1e-12)
    assert v[0] == 0.0


def test_pose_matches_homogeneous_product(robot, rng):
    lo, hi = robot.position_limits()
    for th in rng.uniform(lo, hi, (100, robot.n)):
        pose = tcp_pose(robot, th)
        ref = homogeneous_tcp(robot, th)
        np.testing.assert_allclose(pose.position, ref[:2], atol=1e-12)
        assert math.remainder(pose.orientation - ref[2], 2 * math.pi) == pytest.approx(0.0, abs=1e-12)


def test_jacobian_matches_fd(robot, rng):
    lo, hi = robot.position_limits()
    h = 1e-6
    for th in rng.uniform(lo + 0.05, hi - 0.05, (20, robot.n)):
        J = tcp_jacobian(robot, th)
        for i in range(robot.n):
            e = np.zeros(robot.n)
            e[i] = h
            fd = (homogeneous_tcp(robot, th + e) - homogeneous_tcp(robot, th - e)) / (2 * h)
            np.testing.assert_allclose(J[:, i], fd, rtol=1e-6, atol=1e-6)


def test_jacobian_dot_matches_time_fd(robot, rng):
    motion = smooth_trajectory(robot, rng)
    h = 1e-5
    for t in (0.3, 0.9, 1.7):
        th, thd, _ = motion(t)
        Jd = jacobian_dot(robot, th[0], thd[0])
        fd = (tcp_jacobian(robot, motion(t + h)[0][0]) - tcp_jacobian(robot, motion(t - h)[0][0])) / (2 * h)
        np.testing.assert_allclose(Jd, fd, rtol=1e-5, atol=1e-5 * np.abs(fd).max())


def test_prismatic_column_is_axis_direction(robot):
    th = np.array([2.4, -0.8, 0.5])
    J = tcp_jacobian(robot, th)
    ang = homogeneous_tcp(robot, th)[2]
    np.testing.assert_allclose(J[:, 2], [math.cos(ang), math.sin(ang), 0.0], atol=1e-14)
    J2 = tcp_jacobian(robot, th + [0, 0, 0.7])
    np.testing.assert_allclose(J2[:, 2], J[:, 2], atol=1e-15)


def test_zero_rates_give_zero_actuator_velocity(robot):
    th = np.array([[2.4, -0.8, 0.5], [2.0, -1.1, 1.5]])
    _, v = inverse_dynamics(robot, th, np.zeros_like(th), np.zeros_like(th))
    assert np.all(v == 0.0)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_energy_balance(robot, seed):
    rng = np.random.default_rng(seed)
    motion = smooth_trajectory(robot, rng)
    work = actuator_work(robot, motion, 0.0, 2.0, 2001)
    e = mechanical_energy(robot, motion, np.array([0.0, 2.0]))
    d_e = e[1] - e[0]
    assert abs(d_e) > 1.0
    assert abs(work - d_e) <= 1e-3 * abs(d_e)


def test_virtual_work_identity(robot, rng):
    motion = smooth_trajectory(robot, rng)
    th, thd, thdd = motion(np.linspace(0, 2, 50))
    dyn = evaluate_dynamics(robot, th, thd, thdd)
    lhs = dyn.f_x * dyn.v_x
    rhs = dyn.tau * thd
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * np.abs(rhs).max())


def test_linear_in_acceleration_and_mass_matrix(robot, rng):
    th = np.array([2.5, -0.9, 1.0])
    thd = rng.normal(size=3) * 0.3
    a1, a2 = rng.normal(size=3), rng.normal(size=3)
    t0 = joint_torques(robot, th, thd, np.zeros(3))
    t1 = joint_torques(robot, th, thd, a1)
    t2 = joint_torques(robot, th, thd, a2)
    t12 = joint_torques(robot, th, thd, a1 + a2)
    np.testing.assert_allclose(t12 - t0, (t1 - t0) + (t2 - t0), rtol=1e-9, atol=1e-8)
    M = mass_matrix(robot, th)
    np.testing.assert_allclose(M, M.T, rtol=1e-9, atol=1e-9 * np.abs(M).max())
    assert np.all(np.linalg.eigvalsh(0.5 * (M + M.T)) > 0)


def test_gravity_torque_is_potential_gradient(robot):
    th = np.array([2.3, -0.7, 0.8])

    def potential(q):
        g = np.asarray(robot.gravity)
        return -sum(b.mass * float(b.position[0] @ g) for b in body_poses(robot, q))

    tau = joint_torques(robot, th, np.zeros(3), np.zeros(3))
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (potential(th + e) - potential(th - e)) / (2 * h)
        assert tau[i] == pytest.approx(fd, rel=1e-6)


def test_external_wrench_enters_as_jacobian_transpose(robot):
    th = np.array([2.4, -0.8, 0.5])
    z = np.zeros(3)
    w = np.array([100.0, -300.0, 20.0])
    loaded = replace(robot, external_wrench=tuple(w))
    diff = joint_torques(loaded, th, z, z) - joint_torques(robot, th, z, z)
    np.testing.assert_allclose(diff, -tcp_jacobian(robot, th).T @ w, rtol=1e-10, atol=1e-9)


def test_scaled_mass_mode_changes_only_with_lengths(robot):
    th = np.array([2.4, -0.8, 0.5])
    z = np.zeros(3)
    scaled = replace(robot, mass_scaling="scaled")
    np.testing.assert_allclose(joint_torques(scaled, th, z, z), joint_torques(robot, th, z, z), rtol=1e-6)
    longer = robot.xi * 1.1
    assert not np.allclose(joint_torques(scaled.with_xi(longer), th, z, z),
                           joint_torques(robot.with_xi(longer), th, z, z))


def test_structure_polyline_shapes(robot):
    poly = structure_polyline(robot, np.array([2.4, -0.8, 0.5]))
    assert len(poly["backbone"]) == len(robot.joints) + 2
    assert len(poly["loops"]) == robot.m
    for loop in poly["loops"]:
        d = np.linalg.norm(np.subtract(loop["rod_mount"], loop["base_mount"]))
        chain = next(j.chain for j in robot.joints if j.name == loop["joint"])
        assert chain.x0 <= d <= chain.x0 + chain.Lc


def test_limits_and_config_errors(robot):
    with pytest.raises(RangeError):
        tcp_pose(robot, [4.0, -0.8, 0.5])
    with pytest.raises(ConfigurationError):
        tcp_pose(robot, [2.4, -0.8])
    with pytest.raises(ConfigurationError):
        RobotModel((Joint("a", FIXED, LinkBody(1.0)),), mass_scaling="cubic")
    with pytest.raises(ConfigurationError):
        LinkBody(0.0)
