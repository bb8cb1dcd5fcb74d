"""From a scenario file to a transcribed NLP and back to exportable records."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .description import ensure_valid
from .emla_drive import EfficiencyMap
from .nlp_opt import Bounds, NlpInstance, ProblemDefinition, plain_energy, transcribe
from .planar_dynamics import RobotModel
from .scenario import JointReference, ScenarioSpec, project_reference
from .spline_traj import SplineBasis


@dataclass
class PreparedScenario:
    scenario: ScenarioSpec
    robot: RobotModel
    emlas: list
    maps: list
    basis: SplineBasis
    joint_reference: JointReference
    bounds: Bounds
    nlp: NlpInstance

    @property
    def actuator_names(self) -> list:
        return [self.robot.joints[i].name for i in self.robot.actuated]


def build_maps(emlas, resolution) -> list[EfficiencyMap]:
    n_f, n_v = (int(v) for v in resolution)
    return [e.efficiency_map(n_f, n_v) for e in emlas]


def prepare(scenario: ScenarioSpec) -> PreparedScenario:
    """Load, validate and transcribe; raises on invalid robots or unreachable references."""
    robot = ensure_valid(scenario.load_robot())
    emlas = scenario.load_emlas()
    maps = build_maps(emlas, scenario.map_resolution)
    basis = SplineBasis(scenario.degree, scenario.n_control, scenario.grid.times, robot.n)
    jref = project_reference(robot, scenario, basis)
    c0 = jref.c if scenario.initial_c is None else np.asarray(scenario.initial_c, dtype=float)
    bounds = Bounds.from_robot(robot, emlas, scenario.bounds)
    nlp = transcribe(ProblemDefinition(robot, emlas, maps, basis, jref.reference, bounds, c0))
    return PreparedScenario(scenario, robot, emlas, maps, basis, jref, bounds, nlp)


def series_rows(prep: PreparedScenario, z) -> tuple[list, list]:
    """Header and rows of the per-time actuator table at decision point ``z``."""
    ev = prep.nlp.evaluate(z)
    t = prep.basis.times
    names = prep.actuator_names
    header = ["t"]
    for n in names:
        header += [f"{n}_f_x", f"{n}_v_x", f"{n}_eta", f"{n}_p_mech", f"{n}_p_input"]
    chains = [prep.robot.joints[i].name for i in prep.robot.chain_joints]
    header += [f"{c}_stroke" for c in chains]
    header += ["ref_x", "ref_z"]
    rows = []
    ref = prep.joint_reference.reference.position
    for k in range(t.size):
        row = [t[k]]
        for i in range(len(names)):
            row += [ev.f_x[k, i], ev.v_x[k, i], ev.eta[k, i], ev.p_mech[k, i], ev.p_input[k, i]]
        row += list(ev.strokes[k])
        row += list(ref[k])
        rows.append(row)
    return header, rows


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list, np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def _fmt(v):
    if isinstance(v, str):
        return v
    return repr(float(v))


def simulation_summary(prep: PreparedScenario, z) -> dict:
    ev = prep.nlp.evaluate(z)
    names = prep.actuator_names
    jr = prep.joint_reference
    out = {
        "objective": ev.objective,
        "feasible_geometry": ev.feasible_geometry,
        "constraint_violation": ev.constraints.violation(),
        "block_violations": ev.constraints.block_violations(),
        "reference_fit_rms": jr.fit_rms,
        "reference_deviation_from_spiral": jr.deviation,
        "link_lengths": prep.nlp.split(z)[0].tolist(),
    }
    if ev.feasible_geometry:
        out["plain_energy"] = plain_energy(prep.basis.times, ev.p_input)
        out["peak_force"] = dict(zip(names, np.max(np.abs(ev.f_x), axis=0).tolist()))
        out["peak_velocity"] = dict(zip(names, np.max(np.abs(ev.v_x), axis=0).tolist()))
    return out
