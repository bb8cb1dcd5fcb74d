from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from emla_design.description import load_emla, load_robot
from emla_design.nlp_opt import solve
from emla_design.pipeline import prepare
from emla_design.scenario import load_scenario

DATA = Path(resources.files("emla_design") / "data")


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def robot():
    return load_robot(DATA / "robot_planar_crane.json")


@pytest.fixture(scope="session")
def emlas():
    return [load_emla(DATA / f"emla_{n}.json") for n in ("lift", "outer", "telescope")]


@pytest.fixture(scope="session")
def desk_scenario():
    return load_scenario(DATA / "scenario_desk.json")


@pytest.fixture(scope="session")
def desk(desk_scenario):
    return prepare(desk_scenario)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def smooth_trajectory(robot, rng, duration=2.0, harmonics=2):
    """Random band-limited joint motion centred inside the joint limits.

    Returns a callable ``t -> (theta, thetad, thetadd)`` with arrays of shape ``(len(t), n)``.
    """
    lo, hi = robot.position_limits()
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    amp = 0.25 * half[:, None] * rng.uniform(0.3, 1.0, (robot.n, harmonics))
    freq = (2.0 * np.pi / duration) * rng.uniform(0.3, 1.2, (robot.n, harmonics))
    phase = rng.uniform(0, 2 * np.pi, (robot.n, harmonics))

    def motion(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))[:, None, None]
        arg = freq * t + phase
        th = mid + np.sum(amp * np.sin(arg), axis=-1)
        thd = np.sum(amp * freq * np.cos(arg), axis=-1)
        thdd = -np.sum(amp * freq**2 * np.sin(arg), axis=-1)
        return th, thd, thdd

    return motion


@pytest.fixture(scope="session")
def desk_result(desk):
    return solve(desk.nlp, desk.scenario.solver)


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
