import json
import math
from dataclasses import replace

import numpy as np
import pytest

from emla_design.errors import ConfigurationError, ReachabilityError
from emla_design.scenario import (
    SpiralSpec,
    check_reachable,
    generate_spiral,
    inverse_kinematics,
    load_scenario,
    quintic_scaling,
    scenario_from_dict,
)
from emla_design.planar_dynamics import tcp_pose


def test_quintic_scaling_endpoints():
    s, sd, sdd = quintic_scaling(np.array([0.0, 2.0, 4.0]), 0.0, 4.0)
    np.testing.assert_allclose(s, [0.0, 0.5, 1.0])
    assert sd[0] == sd[2] == 0.0 and sdd[0] == sdd[2] == 0.0


def test_zero_growth_is_circle():
    spec = SpiralSpec((1.0, 2.0), 0.5, 0.0, 2 * math.pi, 3.0)
    t = np.linspace(0, 3, 301)
    ref = generate_spiral(spec, t)
    np.testing.assert_allclose(np.linalg.norm(ref.position - [1.0, 2.0], axis=1), 0.5, atol=1e-14)
    # the angular speed integrates to the full span
    speed = np.linalg.norm(ref.velocity, axis=1) / 0.5
    assert np.trapezoid(speed, t) == pytest.approx(2 * math.pi, rel=1e-4)


def test_endpoint_rest():
    spec = SpiralSpec((0.0, 0.0), 0.2, 0.3, 2 * math.pi, 5.0)
    ref = generate_spiral(spec, np.array([0.0, 5.0]))
    assert np.all(ref.velocity == 0.0) and np.all(ref.acceleration == 0.0)
    assert np.linalg.norm(ref.position[1]) == pytest.approx(0.5)


def test_derivatives_match_fd():
    spec = SpiralSpec((-3.0, 6.0), 0.15, 0.35, 2 * math.pi, 6.25)
    t = np.linspace(0.1, 6.1, 37)
    h = 1e-6
    ref = generate_spiral(spec, t)
    p, m = generate_spiral(spec, t + h), generate_spiral(spec, t - h)
    np.testing.assert_allclose(ref.velocity, (p.position - m.position) / (2 * h), atol=1e-6)
    np.testing.assert_allclose(ref.acceleration, (p.velocity - m.velocity) / (2 * h), atol=1e-6)


def test_spiral_validation():
    with pytest.raises(ConfigurationError):
        SpiralSpec((0.0, 0.0), 0.0, 0.1, 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        SpiralSpec((0.0, 0.0), 0.1, -1.0, 2 * math.pi, 1.0)


def test_inverse_kinematics_hits_targets(robot):
    targets = np.array([tcp_pose(robot, th).position for th in ([2.4, -0.9, 0.8], [2.6, -0.7, 1.2])])
    out = inverse_kinematics(robot, targets, [2.5, -0.9, 1.0], prescribed={1: np.array([-0.9, -0.7])})
    for th, target in zip(out, targets):
        np.testing.assert_allclose(tcp_pose(robot, th).position, target, atol=1e-10)


def test_unreachable_reports_times(robot, desk_scenario):
    far = replace(desk_scenario, spiral=replace(desk_scenario.spiral, center=(-3.2, 30.0)))
    with pytest.raises(ReachabilityError) as info:
        check_reachable(robot, far)
    assert info.value.times[0] == 0.0
    assert len(info.value.times) == desk_scenario.grid.times.size


def test_desk_reference_is_reachable(robot, desk_scenario):
    th = check_reachable(robot, desk_scenario)
    assert th.shape == (desk_scenario.grid.times.size, 3)


def test_scenario_round_trip(data_dir, tmp_path):
    spec = load_scenario(data_dir / "scenario_desk.json")
    text = json.dumps(spec.to_dict())
    again = scenario_from_dict(json.loads(text), base_dir=data_dir)
    again.source = spec.source
    assert again == spec


def test_reference_projection(desk):
    jr = desk.joint_reference
    assert jr.deviation < 0.05
    assert jr.fit_rms < 1e-2
    np.testing.assert_allclose(jr.spiral.position[0], jr.reference.position[0], atol=0.05)
