"""Scenario files, the spiral reference and its joint-space projection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .description import load_emla, load_robot, read_json
from .errors import ConfigurationError, ReachabilityError
from .planar_dynamics import RobotModel, tcp_jacobian, tcp_kinematics, tcp_pose
from .spline_traj import CollocationGrid, SplineBasis, fit_initial_controls
from .sqp import SolverConfig

IK_TOL = 1e-12
IK_MAX_ITER = 50


# --- time scaling and spiral ----------------------------------------------------------

def quintic_scaling(t, t0: float, duration: float):
    """Rest-to-rest profile ``sigma(tau) = 10 tau^3 - 15 tau^4 + 6 tau^5`` and its time derivatives."""
    tau = np.clip((np.asarray(t, dtype=float) - t0) / duration, 0.0, 1.0)
    s = tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)
    sd = 30.0 * tau**2 * (1.0 - tau) ** 2 / duration
    sdd = 60.0 * tau * (1.0 - tau) * (1.0 - 2.0 * tau) / duration**2
    return s, sd, sdd


@dataclass(frozen=True)
class SpiralSpec:
    """Archimedean spiral ``r = r0 + b s`` swept over ``angular_span`` radians.

    ``growth_per_rev`` is the radial gain per full turn, so ``b = growth_per_rev / 2 pi``.
    """
    center: tuple
    start_radius: float
    growth_per_rev: float
    angular_span: float
    duration: float
    start_angle: float = 0.0
    t0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if len(self.center) != 2:
            raise ConfigurationError("spiral center needs two coordinates")
        if not self.start_radius > 0:
            raise ConfigurationError("start_radius must be > 0")
        if not self.angular_span > 0 or not self.duration > 0:
            raise ConfigurationError("angular_span and duration must be > 0")
        if not self.radius(self.angular_span) > 0:
            raise ConfigurationError("spiral radius must stay positive")

    @property
    def growth_rate(self) -> float:
        return self.growth_per_rev / (2.0 * math.pi)

    def radius(self, s):
        return self.start_radius + self.growth_rate * np.asarray(s, dtype=float)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "start_radius": self.start_radius,
                "growth_per_rev": self.growth_per_rev, "angular_span": self.angular_span,
                "duration": self.duration, "start_angle": self.start_angle, "t0": self.t0}


@dataclass(frozen=True)
class ReferenceTrajectory:
    times: np.ndarray
    position: np.ndarray      # (K, 2)
    velocity: np.ndarray
    acceleration: np.ndarray


def generate_spiral(spec: SpiralSpec, times) -> ReferenceTrajectory:
    """Sample the spiral and its analytic first and second time derivatives."""
    t = np.asarray(times, dtype=float)
    sig, sigd, sigdd = quintic_scaling(t, spec.t0, spec.duration)
    s = spec.angular_span * sig
    sd = spec.angular_span * sigd
    sdd = spec.angular_span * sigdd
    b = spec.growth_rate
    r = spec.radius(s)
    phi = spec.start_angle + s
    e_r = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    e_t = np.stack([-np.sin(phi), np.cos(phi)], axis=-1)
    p = np.asarray(spec.center) + r[:, None] * e_r
    dp_ds = b * e_r + r[:, None] * e_t
    d2p_ds2 = 2.0 * b * e_t - r[:, None] * e_r
    v = dp_ds * sd[:, None]
    a = d2p_ds2 * (sd**2)[:, None] + dp_ds * sdd[:, None]
    return ReferenceTrajectory(t, p, v, a)


# --- inverse kinematics -----------------------------------------------------------------

def inverse_kinematics(robot: RobotModel, positions, seed, prescribed=None, times=None):
    """Joint samples placing the TCP at ``positions`` (``(K, 2)``).

    ``prescribed`` maps independent-coordinate columns to ``(K,)`` values; the
    remaining two columns are solved by Newton iteration, continuing from the
    previous sample. Samples that do not converge or leave the joint limits
    raise :class:`ReachabilityError` listing their times.
    """
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    K = pos.shape[0]
    prescribed = prescribed or {}
    free = [col for col in range(robot.n) if col not in prescribed]
    if len(free) != 2:
        raise ConfigurationError(f"position IK needs exactly two free joints, got {len(free)}")
    times = np.arange(K, dtype=float) if times is None else np.asarray(times, dtype=float)
    lo, hi = robot.position_limits()
    th = np.asarray(seed, dtype=float).copy()
    out = np.empty((K, robot.n))
    bad = []
    for k in range(K):
        for col, vals in prescribed.items():
            th[col] = vals[k]
        ok = False
        for _ in range(IK_MAX_ITER):
            try:
                err = pos[k] - tcp_pose(robot, th, check_limits=False).position
                if np.max(np.abs(err)) < IK_TOL:
                    ok = True
                    break
                J = tcp_jacobian(robot, th, check_limits=False)[:2][:, free]
                th[free] += np.linalg.solve(J, err)
            except (ValueError, ArithmeticError, np.linalg.LinAlgError):
                break
        if not ok or np.any(th < lo - 1e-12) or np.any(th > hi + 1e-12):
            bad.append(float(times[k]))
            if not ok:
                th = np.asarray(seed, dtype=float).copy()
        out[k] = th
    if bad:
        raise ReachabilityError(f"reference unreachable at {len(bad)} sample(s), first t = {bad[0]:.6g}", bad)
    return out


# --- scenario -----------------------------------------------------------------------------

@dataclass
class ScenarioSpec:
    name: str
    robot_path: Path
    emla_paths: list
    spiral: SpiralSpec
    grid: CollocationGrid
    n_control: int
    prescribed: dict = field(default_factory=dict)   # joint name -> (start, end), quintic in time
    ik_seed: list | None = None
    degree: int = 3
    solver: SolverConfig = field(default_factory=SolverConfig)
    bounds: dict = field(default_factory=dict)
    initial_xi: list | None = None
    initial_c: list | None = None
    map_resolution: tuple = (41, 41)
    fit_samples: int | None = None
    source: Path | None = None

    def load_robot(self) -> RobotModel:
        robot = load_robot(self.robot_path)
        if self.initial_xi is not None:
            robot = robot.with_xi(self.initial_xi)
        return robot

    def load_emlas(self):
        return [load_emla(p) for p in self.emla_paths]

    def to_dict(self) -> dict:
        base = self.source.parent if self.source else None

        def rel(p):
            p = Path(p)
            if base is not None:
                try:
                    return str(p.relative_to(base))
                except ValueError:
                    pass
            return str(p)

        solver = {k: getattr(self.solver, k) for k in self.solver.__dataclass_fields__}
        return {
            "name": self.name,
            "robot": rel(self.robot_path),
            "emlas": [rel(p) for p in self.emla_paths],
            "trajectory": {"type": "spiral", **self.spiral.to_dict()},
            "prescribed_joints": {k: list(v) for k, v in self.prescribed.items()},
            "ik_seed": self.ik_seed,
            "grid": {"t0": self.grid.t0, "dt": self.grid.dt, "M": self.grid.M},
            "spline": {"degree": self.degree, "N": self.n_control, "fit_samples": self.fit_samples},
            "solver": solver,
            "bounds": self.bounds,
            "initial_xi": self.initial_xi,
            "initial_c": self.initial_c,
            "map_resolution": list(self.map_resolution),
        }


def scenario_from_dict(data: dict, base_dir=None) -> ScenarioSpec:
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    def path(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    traj = dict(data["trajectory"])
    kind = traj.pop("type", "spiral")
    if kind != "spiral":
        raise ConfigurationError(f"unsupported trajectory type {kind!r}")
    grid = data["grid"]
    spline = data.get("spline", {})
    solver_cfg = SolverConfig(**data.get("solver", {}))
    return ScenarioSpec(
        name=data.get("name", "scenario"),
        robot_path=path(data["robot"]),
        emla_paths=[path(p) for p in data["emlas"]],
        spiral=SpiralSpec(**traj),
        grid=CollocationGrid(float(grid["t0"]), float(grid["dt"]), int(grid["M"])),
        n_control=int(spline["N"]),
        degree=int(spline.get("degree", 3)),
        fit_samples=spline.get("fit_samples"),
        prescribed={k: tuple(float(x) for x in v) for k, v in data.get("prescribed_joints", {}).items()},
        ik_seed=data.get("ik_seed"),
        solver=solver_cfg,
        bounds=data.get("bounds", {}),
        initial_xi=data.get("initial_xi"),
        initial_c=data.get("initial_c"),
        map_resolution=tuple(data.get("map_resolution", (41, 41))),
    )


def load_scenario(path) -> ScenarioSpec:
    path = Path(path)
    spec = scenario_from_dict(read_json(path), base_dir=path.parent)
    spec.source = path
    return spec


@dataclass(frozen=True)
class JointReference:
    """Spiral projected onto the spline space: the tracked reference and its joint image."""
    reference: ReferenceTrajectory   # TCP reference at the collocation times
    spiral: ReferenceTrajectory      # analytic spiral at the collocation times
    c: np.ndarray                    # fitted control points
    samples: np.ndarray              # IK joint samples used for the fit
    sample_times: np.ndarray
    fit_rms: float
    deviation: float                 # max |projected - spiral| position error over the grid


def prescribed_columns(robot: RobotModel, prescribed: dict, spec: SpiralSpec, times):
    names = [robot.joints[i].name for i in robot.actuated]
    cols = {}
    for name, (start, end) in prescribed.items():
        if name not in names:
            raise ConfigurationError(f"prescribed joint {name!r} is not an actuated joint")
        sig, _, _ = quintic_scaling(times, spec.t0, spec.duration)
        cols[names.index(name)] = start + (end - start) * sig
    return cols


def project_reference(robot: RobotModel, scenario: ScenarioSpec, basis: SplineBasis) -> JointReference:
    """Fit spline controls to IK samples of the spiral and take their TCP image as reference.

    Tracking every collocation point in position, velocity and acceleration
    gives more equations than control points, so the exact spiral is not
    generally representable; its projection onto the spline space is.
    """
    spec = scenario.spiral
    grid_t = scenario.grid.times
    S = scenario.fit_samples or max(8 * basis.N, 4 * grid_t.size)
    ts = np.linspace(grid_t[0], grid_t[-1], S)
    spiral_dense = generate_spiral(spec, ts)
    seed = scenario.ik_seed if scenario.ik_seed is not None else np.mean(robot.position_limits(), axis=0)
    samples = inverse_kinematics(robot, spiral_dense.position, seed,
                                 prescribed_columns(robot, scenario.prescribed, spec, ts), ts)
    fit = fit_initial_controls(basis, ts, samples)
    th, thd, thdd = basis.evaluate_grid(fit.c)
    pose, vel, acc = tcp_kinematics(robot, th, thd, thdd)
    ref = ReferenceTrajectory(grid_t.copy(), pose[:, :2].copy(), vel[:, :2].copy(), acc[:, :2].copy())
    spiral = generate_spiral(spec, grid_t)
    dev = float(np.max(np.linalg.norm(ref.position - spiral.position, axis=1)))
    return JointReference(ref, spiral, fit.c, samples, ts, fit.rms, dev)


def check_reachable(robot: RobotModel, scenario: ScenarioSpec, times=None) -> np.ndarray:
    """IK of the spiral at ``times`` (collocation times by default); raises when unreachable."""
    t = scenario.grid.times if times is None else np.asarray(times, dtype=float)
    spiral = generate_spiral(scenario.spiral, t)
    seed = scenario.ik_seed if scenario.ik_seed is not None else np.mean(robot.position_limits(), axis=0)
    return inverse_kinematics(robot, spiral.position, seed,
                              prescribed_columns(robot, scenario.prescribed, scenario.spiral, t), t)


def with_overrides(scenario: ScenarioSpec, **changes) -> ScenarioSpec:
    return replace(scenario, **changes)
