"""JSON documents for robots, EMLA units and their round trips."""

from __future__ import annotations

import json
import math
from pathlib import Path

from .closed_chain import ClosedChainParams
from .emla_drive import EmlaUnit
from .errors import ConfigurationError, GeometryInfeasibleError
from .planar_dynamics import (
    CLOSED_CHAIN,
    ActuatorBodies,
    Joint,
    LinkBody,
    RobotModel,
)


def read_json(path) -> dict:
    with Path(path).open(encoding="utf-8") as fh:
        return json.load(fh)


def write_json(data, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def chain_from_dict(d: dict) -> ClosedChainParams:
    Lc, Lc0 = float(d["Lc"]), float(d["Lc0"])
    if "mount_points" in d:
        mp = d["mount_points"]
        return ClosedChainParams.from_mount_points(mp["base"], mp["rod"], Lc, Lc0)
    if "mount_angles" in d:
        ma = d["mount_angles"]
        return ClosedChainParams.from_mounts(float(d["L"]), float(d["L1"]), Lc, Lc0,
                                             float(ma["base"]), float(ma["rod"]))
    return ClosedChainParams(float(d["L"]), float(d["L1"]), Lc, Lc0,
                             float(d["psi"]), float(d["psi1"]), float(d["psi2"]))


def chain_to_dict(c: ClosedChainParams) -> dict:
    return {"L": c.L, "L1": c.L1, "Lc": c.Lc, "Lc0": c.Lc0,
            "psi": c.psi, "psi1": c.psi1, "psi2": c.psi2}


def _pair(value):
    return None if value is None else tuple(float(v) for v in value)


def robot_from_dict(data: dict) -> RobotModel:
    joints = []
    for jd in data["joints"]:
        kind = jd["type"]
        chain = chain_from_dict(jd["closed_chain"]) if kind == CLOSED_CHAIN else None
        bodies = ActuatorBodies(**jd["actuator_bodies"]) if jd.get("actuator_bodies") else None
        joints.append(Joint(
            name=jd["name"],
            kind=kind,
            link=LinkBody(**jd["link"]),
            origin=tuple(jd.get("origin", (0.0, 0.0))),
            angle0=float(jd.get("angle0", 0.0)),
            chain=chain,
            actuator_bodies=bodies,
            axis=tuple(jd.get("axis", (1.0, 0.0))),
            limits=_pair(jd.get("limits")),
            rate_limits=_pair(jd.get("rate_limits")),
            emla=jd.get("emla"),
        ))
    return RobotModel(
        joints=tuple(joints),
        gravity=tuple(data.get("gravity", (0.0, -9.81))),
        tcp_offset=tuple(data.get("tcp_offset", (0.0, 0.0))),
        external_wrench=tuple(data.get("external_wrench", (0.0, 0.0, 0.0))),
        mass_scaling=data.get("mass_scaling", "fixed"),
        name=data.get("name", "robot"),
    )


def robot_to_dict(robot: RobotModel) -> dict:
    joints = []
    for j in robot.joints:
        jd = {
            "name": j.name,
            "type": j.kind,
            "origin": list(j.origin),
            "angle0": j.angle0,
            "link": {"mass": j.link.mass, "com": list(j.link.com),
                     "inertia": j.link.inertia, "length": j.link.length},
        }
        if j.chain is not None:
            jd["closed_chain"] = chain_to_dict(j.chain)
        if j.actuator_bodies is not None:
            ab = j.actuator_bodies
            jd["actuator_bodies"] = {k: getattr(ab, k) for k in ab.__dataclass_fields__}
        if j.kind != CLOSED_CHAIN and j.actuated:
            jd["axis"] = list(j.axis)
        for key in ("limits", "rate_limits"):
            if getattr(j, key) is not None:
                jd[key] = list(getattr(j, key))
        if j.emla is not None:
            jd["emla"] = j.emla
        joints.append(jd)
    return {
        "name": robot.name,
        "gravity": list(robot.gravity),
        "tcp_offset": list(robot.tcp_offset),
        "external_wrench": list(robot.external_wrench),
        "mass_scaling": robot.mass_scaling,
        "joints": joints,
    }


def load_robot(path) -> RobotModel:
    return robot_from_dict(read_json(path))


def load_emla(path) -> EmlaUnit:
    return EmlaUnit.from_dict(read_json(path))


def validate_robot_dict(data: dict) -> list[tuple[str, str]]:
    """Static checks of a robot document; returns ``(constraint, message)`` failures.

    Length checks run on the raw document so that non-positive lengths are
    reported by constraint name instead of failing construction.
    """
    failures = []
    for jd in data.get("joints", []):
        if jd.get("type") != CLOSED_CHAIN:
            continue
        raw = jd.get("closed_chain", {})
        for name in ("L", "L1", "Lc", "Lc0"):
            if name in raw and not float(raw[name]) > 0:
                failures.append(("link_length_bounds", f"{jd.get('name')}: {name} = {raw[name]} must be > 0"))
    if failures:
        return failures
    try:
        robot = robot_from_dict(data)
    except (ValueError, KeyError, TypeError) as exc:
        return [("robot_description", str(exc))]
    return validate_robot(robot)


def validate_robot(robot: RobotModel) -> list[tuple[str, str]]:
    failures = []
    for idx in robot.chain_joints:
        j = robot.joints[idx]
        c = j.chain
        try:
            c.check_feasible()
        except GeometryInfeasibleError as exc:
            failures.append(("chain_length_ordering", f"{j.name}: {exc}"))
        err = c.offset_closure_error()
        if abs(err) > 1e-9:
            failures.append(("loop_closure", f"{j.name}: offsets do not close the loop (error {err:.3e} rad)"))
        if j.limits is not None:
            if not j.limits[0] < j.limits[1]:
                failures.append(("joint_position_limits", f"{j.name}: empty joint limits"))
            for th in j.limits:
                q = math.remainder(th - c.psi, 2.0 * math.pi)
                if not -math.pi < q < 0.0:
                    failures.append(("triangle_closure", f"{j.name}: limit {th} outside the chain's assembly range"))
    return failures


def ensure_valid(robot: RobotModel) -> RobotModel:
    failures = validate_robot(robot)
    if failures:
        raise ConfigurationError("; ".join(f"[{c}] {m}" for c, m in failures))
    return robot
