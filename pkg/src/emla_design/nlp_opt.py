"""Energy-optimal kinematic design as a finite-dimensional NLP.

Decision vector ``z = [Xi, c]``: the link lengths ``[L, Lc0, Lc]`` of every
closed chain (in joint order), then the spline control points stacked
joint-major. Inverse dynamics is substituted into the objective rather than
posed as a constraint, so actuator forces and velocities are functions of ``z``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import closed_chain as cc
from . import sqp
from .emla_drive import lookup_efficiency
from .errors import ConfigurationError, EmlaDesignError, SolverBreakdown
from .planar_dynamics import CLOSED_CHAIN, RobotModel, evaluate_dynamics, structure_polyline, tcp_kinematics
from .scenario import ReferenceTrajectory
from .spline_traj import SplineBasis

log = logging.getLogger(__name__)

PENALTY_SENTINEL = 1e12
# residual assigned to geometry-dependent rows when the geometry cannot be evaluated
INFEASIBLE_RESIDUAL = 1e3

EQUALITY_BLOCKS = (
    "tcp_position_tracking",
    "tcp_velocity_tracking",
    "tcp_acceleration_tracking",
    "triangle_closure",
    "loop_closure",
)
INEQUALITY_BLOCKS = (
    "actuator_velocity_limits",
    "actuator_force_limits",
    "link_length_bounds",
    "joint_position_limits",
    "joint_rate_limits",
    "stroke_limits",
    "chain_length_ordering",
)


# --- bounds and problem definition ----------------------------------------------------

@dataclass(frozen=True)
class Bounds:
    xi_lower: np.ndarray
    xi_upper: np.ndarray
    theta_lower: np.ndarray
    theta_upper: np.ndarray
    rate_lower: np.ndarray
    rate_upper: np.ndarray
    force_lower: np.ndarray
    force_upper: np.ndarray
    velocity_lower: np.ndarray
    velocity_upper: np.ndarray

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for lo, hi in (("xi_lower", "xi_upper"), ("theta_lower", "theta_upper"),
                       ("rate_lower", "rate_upper"), ("force_lower", "force_upper"),
                       ("velocity_lower", "velocity_upper")):
            a, b = getattr(self, lo), getattr(self, hi)
            if a.shape != b.shape:
                raise ConfigurationError(f"{lo}/{hi} shapes differ")
            if np.any(a > b):
                raise ConfigurationError(f"{lo} exceeds {hi}")
        if np.any(self.xi_lower < 0):
            raise ConfigurationError("link lengths must be bounded below by 0")

    @classmethod
    def from_robot(cls, robot: RobotModel, emlas, overrides: dict | None = None) -> "Bounds":
        """Joint limits from the robot, actuator limits from the EMLAs, lengths from ``overrides``.

        Link lengths default to ``[0.5, 1.5] x`` their current values.
        """
        o = dict(overrides or {})
        xi = robot.xi
        th_lo, th_hi = robot.position_limits()
        rt_lo, rt_hi = robot.rate_limits()
        units = [emlas[e] for e in robot.emla_order]
        vals = dict(
            xi_lower=0.5 * xi, xi_upper=1.5 * xi,
            theta_lower=th_lo, theta_upper=th_hi,
            rate_lower=rt_lo, rate_upper=rt_hi,
            force_lower=[u.drive.force_limits[0] for u in units],
            force_upper=[u.drive.force_limits[1] for u in units],
            velocity_lower=[u.drive.velocity_limits[0] for u in units],
            velocity_upper=[u.drive.velocity_limits[1] for u in units],
        )
        unknown = set(o) - set(vals)
        if unknown:
            raise ConfigurationError(f"unknown bound keys: {sorted(unknown)}")
        vals.update(o)
        return cls(**vals)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in self.__dataclass_fields__}


@dataclass
class ProblemDefinition:
    robot: RobotModel
    emlas: list            # EmlaUnit, indexed by Joint.emla
    maps: list             # EfficiencyMap, same indexing
    basis: SplineBasis
    reference: ReferenceTrajectory
    bounds: Bounds
    c0: np.ndarray
    xi0: np.ndarray | None = None


# --- constraint container ---------------------------------------------------------------

@dataclass
class ConstraintSet:
    """Named residual blocks; equalities want 0, inequalities want ``<= 0``.

    Within each block rows run over collocation points first, then over the
    chain / joint / actuator index, then over lower-before-upper sides.
    """
    equality: dict = field(default_factory=dict)
    inequality: dict = field(default_factory=dict)

    def eq_vector(self, names=EQUALITY_BLOCKS) -> np.ndarray:
        parts = [np.ravel(self.equality[n]) for n in names]
        return np.concatenate(parts) if parts else np.zeros(0)

    def ineq_vector(self, names=INEQUALITY_BLOCKS) -> np.ndarray:
        parts = [np.ravel(self.inequality[n]) for n in names]
        return np.concatenate(parts) if parts else np.zeros(0)

    def max_equality(self) -> float:
        v = self.eq_vector()
        return float(np.max(np.abs(v))) if v.size else 0.0

    def max_inequality(self) -> float:
        v = self.ineq_vector()
        return float(max(0.0, np.max(v))) if v.size else 0.0

    def violation(self) -> float:
        return max(self.max_equality(), self.max_inequality())

    def block_violations(self) -> dict:
        out = {n: float(np.max(np.abs(v))) if np.size(v) else 0.0 for n, v in self.equality.items()}
        out.update({n: float(max(0.0, np.max(v))) if np.size(v) else 0.0 for n, v in self.inequality.items()})
        return out


def _two_sided(val, lo, hi):
    """Stack ``lo - val`` and ``val - hi`` as ``(K, j, 2)``, skipping infinite sides as 0 residual."""
    lo_r = np.where(np.isfinite(lo), lo - val, -np.inf)
    hi_r = np.where(np.isfinite(hi), val - hi, -np.inf)
    out = np.stack([lo_r, hi_r], axis=-1)
    return np.where(np.isfinite(out), out, -1.0)


# --- evaluation ---------------------------------------------------------------------------

@dataclass
class Evaluation:
    objective: float
    constraints: ConstraintSet
    feasible_geometry: bool
    f_x: np.ndarray | None = None     # (K, n_a) in actuated-joint order
    v_x: np.ndarray | None = None
    eta: np.ndarray | None = None
    strokes: np.ndarray | None = None  # (K, m)
    message: str = ""

    @property
    def p_mech(self):
        return None if self.f_x is None else self.f_x * self.v_x

    @property
    def p_input(self):
        if self.f_x is None:
            return None
        p = self.p_mech
        return np.where(p >= 0.0, p / self.eta, p * self.eta)


def input_power(f_x, v_x, maps, emla_order):
    """Per-actuator electrical input power and the looked-up efficiency.

    Motoring (``f v >= 0``) draws ``f v / eta``; generating returns
    ``f v * eta`` because regenerative map entries are ``P_elec / P_mech``.
    """
    eta = np.column_stack([lookup_efficiency(maps[e], f_x[:, i], v_x[:, i])
                           for i, e in enumerate(emla_order)])
    p_mech = f_x * v_x
    return np.where(p_mech >= 0.0, p_mech / eta, p_mech * eta), eta


def objective_from_series(f_x, v_x, maps, emla_order, dt) -> float:
    p_in, _ = input_power(f_x, v_x, maps, emla_order)
    total = p_in.sum(axis=1)
    return 0.5 * dt * float(np.sum(total**2))


def _chain_rows(robot, chain_states, K):
    m = robot.m
    tri = np.empty((K, m))
    loop = np.empty((K, m, 3))
    stroke = np.empty((K, m, 2))
    order = np.empty((K, m))
    x = np.empty((K, m))
    for b, idx in enumerate(robot.chain_joints):
        ch = robot.joints[idx].chain
        st = chain_states[idx]
        tri[:, b] = cc.triangle_closure_residual(st.q, st.q1, st.q2)
        loop[:, b] = cc.loop_closure_residual(ch, st.theta, st.theta1, st.x, st.theta2)
        stroke[:, b, 0] = -st.x
        stroke[:, b, 1] = st.x - ch.Lc
        order[:, b] = ch.Lc0 + st.x + ch.Lc - (ch.L + ch.L1)
        x[:, b] = st.x
    return tri, loop, stroke, order, x


def evaluate_point(robot: RobotModel, xi, c, basis: SplineBasis, reference: ReferenceTrajectory,
                   bounds: Bounds, maps) -> Evaluation:
    """Objective, all constraint blocks and the actuator series at one decision point."""
    xi = np.asarray(xi, dtype=float)
    robot = robot.with_xi(xi)
    th, thd, thdd = basis.evaluate_grid(c)
    K = th.shape[0]
    m, n = robot.m, robot.n
    cs = ConstraintSet()

    pose, vel, acc = tcp_kinematics(robot, th, thd, thdd) if _backbone_ok(robot, th) else (None, None, None)
    if pose is None:
        cs.equality["tcp_position_tracking"] = np.full((K, 2), INFEASIBLE_RESIDUAL)
        cs.equality["tcp_velocity_tracking"] = np.full((K - 2, 2), INFEASIBLE_RESIDUAL)
        cs.equality["tcp_acceleration_tracking"] = np.full((K - 2, 2), INFEASIBLE_RESIDUAL)
    else:
        cs.equality["tcp_position_tracking"] = pose[:, :2] - reference.position
        cs.equality["tcp_velocity_tracking"] = (vel[:, :2] - reference.velocity)[1:-1]
        cs.equality["tcp_acceleration_tracking"] = (acc[:, :2] - reference.acceleration)[1:-1]

    xi_b = np.stack([bounds.xi_lower - xi, xi - bounds.xi_upper], axis=-1)
    cs.inequality["link_length_bounds"] = xi_b
    cs.inequality["joint_position_limits"] = _two_sided(th, bounds.theta_lower, bounds.theta_upper)
    cs.inequality["joint_rate_limits"] = _two_sided(thd, bounds.rate_lower, bounds.rate_upper)

    try:
        dyn = evaluate_dynamics(robot, th, thd, thdd, check_limits=False, check_stroke=False)
        f_x, v_x = dyn.f_x, dyn.v_x
        p_in, eta = input_power(f_x, v_x, maps, robot.emla_order)
        tri, loop, stroke, order, x = _chain_rows(robot, dyn.chain_states, K)
    except (EmlaDesignError, ValueError, ArithmeticError) as exc:
        cs.equality["triangle_closure"] = np.full((K, m), INFEASIBLE_RESIDUAL)
        cs.equality["loop_closure"] = np.full((K, m, 3), INFEASIBLE_RESIDUAL)
        cs.inequality["actuator_velocity_limits"] = np.full((K, n, 2), INFEASIBLE_RESIDUAL)
        cs.inequality["actuator_force_limits"] = np.full((K, n, 2), INFEASIBLE_RESIDUAL)
        cs.inequality["stroke_limits"] = np.full((K, m, 2), INFEASIBLE_RESIDUAL)
        cs.inequality["chain_length_ordering"] = np.full((K, m), INFEASIBLE_RESIDUAL)
        return Evaluation(PENALTY_SENTINEL + cs.violation(), cs, False, message=str(exc))

    cs.equality["triangle_closure"] = tri
    cs.equality["loop_closure"] = loop
    cs.inequality["actuator_velocity_limits"] = _two_sided(v_x, bounds.velocity_lower, bounds.velocity_upper)
    cs.inequality["actuator_force_limits"] = _two_sided(f_x, bounds.force_lower, bounds.force_upper)
    cs.inequality["stroke_limits"] = stroke
    cs.inequality["chain_length_ordering"] = order
    total = p_in.sum(axis=1)
    obj = 0.5 * basis_dt(basis) * float(np.sum(total**2))
    return Evaluation(obj, cs, True, f_x, v_x, eta, x)


def basis_dt(basis: SplineBasis) -> float:
    t = basis.times
    return float((t[-1] - t[0]) / (t.size - 1))


def _backbone_ok(robot, th) -> bool:
    """Every chain joint inside its assembly range, so poses are defined."""
    for col, idx in enumerate(robot.actuated):
        j = robot.joints[idx]
        if j.kind == CLOSED_CHAIN:
            q = np.remainder(th[:, col] - j.chain.psi + math.pi, 2.0 * math.pi) - math.pi
            if np.any(q <= -math.pi) or np.any(q >= 0.0):
                return False
    return True


def objective(xi, c, robot, maps, basis: SplineBasis) -> float:
    """``0.5 dt sum_t (sum_i P_in,i)^2`` over the collocation grid, ``P_in`` from :func:`input_power`."""
    robot = robot.with_xi(xi)
    th, thd, thdd = basis.evaluate_grid(c)
    if not _backbone_ok(robot, th):
        return PENALTY_SENTINEL
    dyn = evaluate_dynamics(robot, th, thd, thdd, check_limits=False, check_stroke=False)
    return objective_from_series(dyn.f_x, dyn.v_x, maps, robot.emla_order, basis_dt(basis))


def constraints(xi, c, robot, reference, bounds, basis, maps) -> ConstraintSet:
    return evaluate_point(robot, xi, c, basis, reference, bounds, maps).constraints


# --- transcription ------------------------------------------------------------------------

class NlpInstance:
    """Flat-vector view of a :class:`ProblemDefinition`."""

    def __init__(self, definition: ProblemDefinition):
        d = definition
        robot = d.robot
        if d.basis.n != robot.n:
            raise ConfigurationError(f"basis has {d.basis.n} joints, robot has {robot.n}")
        K = d.basis.times.size
        for name in ("position", "velocity", "acceleration"):
            if getattr(d.reference, name).shape != (K, 2):
                raise ConfigurationError(f"reference {name} must have shape ({K}, 2)")
        if np.asarray(d.c0).size != robot.n * d.basis.N:
            raise ConfigurationError(f"initial controls need {robot.n * d.basis.N} entries")
        if len(d.maps) != robot.n_a:
            raise ConfigurationError(f"{robot.n_a} efficiency maps required, got {len(d.maps)}")
        if d.bounds.xi_lower.size != 3 * robot.m:
            raise ConfigurationError(f"length bounds need {3 * robot.m} entries")
        self.definition = d
        self.n_xi = 3 * robot.m
        self.n_c = robot.n * d.basis.N
        self.size = self.n_xi + self.n_c
        xi0 = robot.xi if d.xi0 is None else np.asarray(d.xi0, dtype=float)
        self.x0 = self.pack(xi0, d.c0)
        self.lower = np.concatenate([d.bounds.xi_lower, np.full(self.n_c, -np.inf)])
        self.upper = np.concatenate([d.bounds.xi_upper, np.full(self.n_c, np.inf)])
        self._cache_key = None
        self._cache_val = None

    def split(self, z):
        z = np.asarray(z, dtype=float)
        if z.size != self.size:
            raise ConfigurationError(f"decision vector must have {self.size} entries, got {z.size}")
        return z[: self.n_xi], z[self.n_xi:]

    def pack(self, xi, c):
        return np.concatenate([np.asarray(xi, dtype=float).ravel(), np.asarray(c, dtype=float).ravel()])

    def evaluate(self, z) -> Evaluation:
        z = np.asarray(z, dtype=float)
        key = z.tobytes()
        if key != self._cache_key:
            xi, c = self.split(z)
            d = self.definition
            self._cache_val = evaluate_point(d.robot, xi, c, d.basis, d.reference, d.bounds, d.maps)
            self._cache_key = key
        return self._cache_val

    def objective(self, z) -> float:
        return self.evaluate(z).objective

    def constraints(self, z) -> ConstraintSet:
        return self.evaluate(z).constraints

    def solver_function(self, z):
        """``(f, h, g)`` for the SQP; length bounds are handled as box bounds instead of rows."""
        ev = self.evaluate(z)
        cs = ev.constraints
        g_names = [n for n in INEQUALITY_BLOCKS if n != "link_length_bounds"]
        return ev.objective, cs.eq_vector(), cs.ineq_vector(g_names)


def transcribe(definition: ProblemDefinition) -> NlpInstance:
    return NlpInstance(definition)


# --- solve ---------------------------------------------------------------------------------

@dataclass
class OptimizationResult:
    z: np.ndarray
    xi: np.ndarray
    c: np.ndarray
    xi_initial: np.ndarray
    c_initial: np.ndarray
    status: str
    success: bool
    iterations: int
    objective_initial: float
    objective_final: float
    objective_trace: list
    violation_trace: list
    merit_trace: list              # merit after each accepted step
    merit_before_trace: list       # merit at the start of that step, same penalty weight
    violation: float
    block_violations: dict
    series_initial: dict
    series_final: dict
    times: np.ndarray
    evaluations: int = 0
    wall_time: float = 0.0


def actuator_series(nlp: NlpInstance, z) -> dict:
    ev = nlp.evaluate(z)
    if not ev.feasible_geometry:
        return {}
    return {"f_x": ev.f_x.copy(), "v_x": ev.v_x.copy(), "eta": ev.eta.copy(),
            "p_mech": ev.p_mech, "p_input": ev.p_input, "stroke": ev.strokes.copy()}


def solve(nlp: NlpInstance, config: sqp.SolverConfig | None = None, callback=None) -> OptimizationResult:
    """Run the SQP from ``nlp.x0``. Raises :class:`SolverBreakdown` on subproblem failure."""
    cfg = config or sqp.SolverConfig()
    ev0 = nlp.evaluate(nlp.x0)
    if not ev0.feasible_geometry:
        raise SolverBreakdown(f"initial point has infeasible geometry: {ev0.message}", nlp.x0.copy())
    res = sqp.solve(nlp.solver_function, nlp.x0, nlp.lower, nlp.upper, cfg, callback=callback)
    xi, c = nlp.split(res.x)
    xi0, c0 = nlp.split(nlp.x0)
    ev = nlp.evaluate(res.x)
    return OptimizationResult(
        z=res.x.copy(), xi=xi.copy(), c=c.copy(), xi_initial=xi0.copy(), c_initial=c0.copy(),
        status=res.status, success=res.success, iterations=res.iterations,
        objective_initial=res.objective_initial, objective_final=ev.objective,
        objective_trace=res.objective_trace, violation_trace=res.violation_trace,
        merit_trace=[h.merit_after for h in res.history],
        merit_before_trace=[h.merit_before for h in res.history], violation=ev.constraints.violation(),
        block_violations=ev.constraints.block_violations(),
        series_initial=actuator_series(nlp, nlp.x0), series_final=actuator_series(nlp, res.x),
        times=nlp.definition.basis.times.copy(), evaluations=res.evaluations, wall_time=res.wall_time,
    )


# --- reporting ------------------------------------------------------------------------------

def plain_energy(times, p_input) -> float:
    """Trapezoidal ``int sum_i |P_i| dt``."""
    total = np.abs(np.asarray(p_input)).sum(axis=1)
    return float(np.sum(0.5 * (total[1:] + total[:-1]) * np.diff(times)))


def energy_report(result: OptimizationResult, nlp: NlpInstance) -> dict:
    """Initial-versus-final energy figures, peaks, length table and structure coordinates."""
    robot = nlp.definition.robot
    names = [robot.joints[i].name for i in robot.actuated]
    chain_names = [robot.joints[i].name for i in robot.chain_joints]
    t = result.times

    def summary(series, cost):
        if not series:
            return {"cost": cost}
        return {
            "cost": cost,
            "plain_energy": plain_energy(t, series["p_input"]),
            "peak_force": dict(zip(names, np.max(np.abs(series["f_x"]), axis=0).tolist())),
            "peak_velocity": dict(zip(names, np.max(np.abs(series["v_x"]), axis=0).tolist())),
        }

    lengths = []
    for b, name in enumerate(chain_names):
        for k, label in enumerate(("L", "Lc0", "Lc")):
            lengths.append({"chain": name, "length": label,
                            "initial": float(result.xi_initial[3 * b + k]),
                            "final": float(result.xi[3 * b + k])})

    def poly(xi, c):
        r = robot.with_xi(xi)
        th, _, _ = nlp.definition.basis.evaluate_grid(c)
        return [structure_polyline(r, th[k]) for k in range(th.shape[0])]

    return {
        "initial": summary(result.series_initial, result.objective_initial),
        "final": summary(result.series_final, result.objective_final),
        "link_lengths": lengths,
        "structure": {"initial": poly(result.xi_initial, result.c_initial),
                      "final": poly(result.xi, result.c)},
    }
