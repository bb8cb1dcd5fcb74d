"""Planar (X-Z) kinematics and inverse dynamics of a parallel-serial manipulator.

The serial backbone is a list of joints. A ``closed_chain`` joint is a revolute
pivot whose angle is the independent coordinate of a four-link loop; the
loop's cylinder and rod are extra rigid bodies whose motion follows from the
closed-chain relations. A ``prismatic_telescope`` joint translates its link
along an axis. ``fixed`` joints only place the next link.

Inverse dynamics runs a forward Newton-Euler pass over every body (backbone
links and both loop branches), forms each body's inertial-minus-gravity
wrench, and projects it onto the independent coordinates with partial
velocities. Closed-chain torques are then mapped to actuator forces through
the holonomic ratio ``k1 = dq/dx``.

Every routine accepts a single configuration of shape ``(n,)`` or a batch of
shape ``(K, n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import closed_chain as cc
from .closed_chain import ClosedChainParams, wrap_angle
from .errors import ConfigurationError, ModelInconsistencyError, RangeError

CLOSED_CHAIN = "closed_chain"
TELESCOPE = "prismatic_telescope"
FIXED = "fixed"
JOINT_KINDS = (CLOSED_CHAIN, TELESCOPE, FIXED)


@dataclass(frozen=True)
class LinkBody:
    mass: float
    com: tuple = (0.0, 0.0)
    inertia: float = 0.0
    length: float = 0.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ConfigurationError(f"link mass must be > 0, got {self.mass}")
        if not self.inertia >= 0:
            raise ConfigurationError(f"link inertia must be >= 0, got {self.inertia}")
        object.__setattr__(self, "com", tuple(float(v) for v in self.com))


@dataclass(frozen=True)
class ActuatorBodies:
    """Cylinder and rod of a loop actuator.

    Centres of mass sit at ``fraction * x0`` from the base mount (cylinder) and
    back from the rod-end mount (rod). ``reference_length`` is the ``x0`` at
    which masses are given; it only matters for length-scaled inertia.
    """

    cylinder_mass: float
    rod_mass: float
    cylinder_inertia: float = 0.0
    rod_inertia: float = 0.0
    cylinder_com_fraction: float = 0.5
    rod_com_fraction: float = 0.5
    reference_length: float = 1.0


@dataclass(frozen=True)
class Joint:
    name: str
    kind: str
    link: LinkBody
    origin: tuple = (0.0, 0.0)
    angle0: float = 0.0
    chain: ClosedChainParams | None = None
    actuator_bodies: ActuatorBodies | None = None
    axis: tuple = (1.0, 0.0)
    limits: tuple | None = None
    rate_limits: tuple | None = None
    emla: int | None = None

    def __post_init__(self):
        if self.kind not in JOINT_KINDS:
            raise ConfigurationError(f"unknown joint kind {self.kind!r}")
        if self.kind == CLOSED_CHAIN and self.chain is None:
            raise ConfigurationError(f"joint {self.name}: closed_chain joint needs chain parameters")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        ax = np.asarray(self.axis, dtype=float)
        object.__setattr__(self, "axis", tuple(ax / np.linalg.norm(ax)))

    @property
    def actuated(self) -> bool:
        return self.kind != FIXED


@dataclass(frozen=True)
class PlanarPose:
    position: np.ndarray
    orientation: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", wrap_angle(self.orientation))


@dataclass(frozen=True)
class RobotModel:
    joints: tuple
    gravity: tuple = (0.0, -9.81)
    tcp_offset: tuple = (0.0, 0.0)
    external_wrench: tuple = (0.0, 0.0, 0.0)  # (F_x, F_z, M) applied at the TCP
    mass_scaling: str = "fixed"
    name: str = field(default="robot", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        if self.mass_scaling not in ("fixed", "scaled"):
            raise ConfigurationError("mass_scaling must be 'fixed' or 'scaled'")
        emla = [j.emla for j in self.joints if j.actuated]
        if any(e is None for e in emla) or sorted(emla) != list(range(len(emla))):
            raise ConfigurationError("every actuated joint needs a distinct EMLA index 0..n_a-1")

    @property
    def actuated(self) -> list[int]:
        return [i for i, j in enumerate(self.joints) if j.actuated]

    @property
    def n(self) -> int:
        return len(self.actuated)

    @property
    def n_a(self) -> int:
        return self.n

    @property
    def chain_joints(self) -> list[int]:
        return [i for i, j in enumerate(self.joints) if j.kind == CLOSED_CHAIN]

    @property
    def m(self) -> int:
        return len(self.chain_joints)

    @property
    def xi(self) -> np.ndarray:
        if not self.chain_joints:
            return np.zeros(0)
        return np.concatenate([self.joints[i].chain.xi for i in self.chain_joints])

    @property
    def emla_order(self) -> list[int]:
        """EMLA index of each independent coordinate."""
        return [self.joints[i].emla for i in self.actuated]

    def with_xi(self, xi) -> "RobotModel":
        xi = np.asarray(xi, dtype=float)
        if xi.size != 3 * self.m:
            raise ConfigurationError(f"expected {3 * self.m} link lengths, got {xi.size}")
        joints = list(self.joints)
        for block, i in enumerate(self.chain_joints):
            joints[i] = replace(joints[i], chain=joints[i].chain.with_xi(xi[3 * block: 3 * block + 3]))
        return replace(self, joints=tuple(joints))

    def position_limits(self):
        lo = np.full(self.n, -np.inf)
        hi = np.full(self.n, np.inf)
        for col, i in enumerate(self.actuated):
            if self.joints[i].limits is not None:
                lo[col], hi[col] = self.joints[i].limits
        return lo, hi

    def rate_limits(self):
        lo = np.full(self.n, -np.inf)
        hi = np.full(self.n, np.inf)
        for col, i in enumerate(self.actuated):
            if self.joints[i].rate_limits is not None:
                lo[col], hi[col] = self.joints[i].rate_limits
        return lo, hi


# --- planar helpers -------------------------------------------------------------

def _u(angle):
    return np.stack([np.cos(angle), np.sin(angle)], axis=-1)


def _rotate(angle, vec):
    """Rotate constant or per-sample 2-vectors by per-sample angles."""
    c = np.cos(angle)[..., None]
    s = np.sin(angle)[..., None]
    vec = np.broadcast_to(vec, c.shape[:-1] + (2,))
    return np.concatenate([c * vec[..., :1] - s * vec[..., 1:], s * vec[..., :1] + c * vec[..., 1:]], axis=-1)


def _cross(w, r):
    """Planar ``w x r`` for scalar angular rate ``w``."""
    w = np.asarray(w)[..., None]
    return w * np.stack([-r[..., 1], r[..., 0]], axis=-1)


@dataclass
class _Frame:
    p: np.ndarray
    ang: np.ndarray
    v: np.ndarray
    w: np.ndarray
    a: np.ndarray
    al: np.ndarray

    def point(self, r_world):
        """Motion of a point rigidly attached to this frame at world offset ``r_world``."""
        return (
            self.p + r_world,
            self.v + _cross(self.w, r_world),
            self.a + _cross(self.al, r_world) - (self.w**2)[..., None] * r_world,
        )


@dataclass
class _Body:
    name: str
    mass: float
    inertia: float
    p: np.ndarray
    ang: np.ndarray
    v: np.ndarray
    w: np.ndarray
    a: np.ndarray
    al: np.ndarray


@dataclass
class _Motion:
    bodies: list
    tcp: _Frame
    pre_frames: list  # frame just before each joint's own motion
    chain_states: dict  # joint index -> ChainState


def _as_batch(*arrays, n):
    out = []
    single = np.ndim(arrays[0]) == 1
    for a in arrays:
        a = np.atleast_2d(np.asarray(a, dtype=float))
        if a.shape[-1] != n:
            raise ConfigurationError(f"expected {n} joint coordinates, got shape {a.shape}")
        out.append(a)
    return single, out


def check_joint_limits(robot: RobotModel, th) -> None:
    lo, hi = robot.position_limits()
    th = np.atleast_2d(th)
    bad = (th < lo) | (th > hi)
    if np.any(bad):
        k, j = np.argwhere(bad)[0]
        raise RangeError(f"joint {robot.joints[robot.actuated[j]].name} = {th[k, j]} outside [{lo[j]}, {hi[j]}]")


def _actuator_masses(robot, joint, chain):
    ab = joint.actuator_bodies
    if robot.mass_scaling == "fixed":
        return ab.cylinder_mass, ab.cylinder_inertia, ab.rod_mass, ab.rod_inertia
    r = chain.x0 / ab.reference_length
    return ab.cylinder_mass * r, ab.cylinder_inertia * r**3, ab.rod_mass * r, ab.rod_inertia * r**3


def _motion(robot: RobotModel, th, thd, thdd, check_stroke=False, with_bodies=True) -> _Motion:
    K = th.shape[0]
    zeros = np.zeros(K)
    frame = _Frame(np.zeros((K, 2)), zeros.copy(), np.zeros((K, 2)), zeros.copy(), np.zeros((K, 2)), zeros.copy())
    g = np.asarray(robot.gravity, dtype=float)
    bodies, pre_frames, chain_states = [], [], {}
    col = 0
    for idx, joint in enumerate(robot.joints):
        r = _rotate(frame.ang, np.asarray(joint.origin))
        p, v, a = frame.point(r)
        pre = _Frame(p, frame.ang + joint.angle0, v, frame.w, a, frame.al)
        pre_frames.append(pre)
        if joint.kind == FIXED:
            child = pre
        elif joint.kind == CLOSED_CHAIN:
            q, qd, qdd = th[:, col], thd[:, col], thdd[:, col]
            col += 1
            child = _Frame(pre.p, pre.ang + q, pre.v, pre.w + qd, pre.a, pre.al + qdd)
            chain = joint.chain
            st = cc.chain_state(chain, q, qd, qdd, check_stroke=check_stroke)
            chain_states[idx] = st
            if with_bodies and joint.actuator_bodies is not None:
                bodies.extend(_loop_bodies(robot, joint, chain, pre, st))
        else:
            d, dd, ddd = th[:, col], thd[:, col], thdd[:, col]
            col += 1
            u = _rotate(pre.ang, np.asarray(joint.axis))
            r = d[:, None] * u
            p, v, a = pre.point(r)
            v = v + dd[:, None] * u
            a = a + 2.0 * _cross(pre.w, dd[:, None] * u) + ddd[:, None] * u
            child = _Frame(p, pre.ang, v, pre.w, a, pre.al)
        if with_bodies:
            rc = _rotate(child.ang, np.asarray(joint.link.com))
            pc, vc, ac = child.point(rc)
            bodies.append(_Body(joint.name, joint.link.mass, joint.link.inertia,
                                pc, child.ang, vc, child.w, ac, child.al))
        frame = child
    rt = _rotate(frame.ang, np.asarray(robot.tcp_offset))
    pt, vt, at = frame.point(rt)
    tcp = _Frame(pt, frame.ang, vt, frame.w, at, frame.al)
    return _Motion(bodies, tcp, pre_frames, chain_states)


def _loop_bodies(robot, joint, chain, pre, st):
    m_c, i_c, m_r, i_r = _actuator_masses(robot, joint, chain)
    ab = joint.actuator_bodies
    r_bc = _rotate(pre.ang, chain.L * np.array([math.cos(chain.base_mount_angle), math.sin(chain.base_mount_angle)]))
    p_bc, v_bc, a_bc = pre.point(r_bc)
    # lower-chain pins turn clockwise: cylinder direction is -theta1 in the pre-joint frame
    ang = pre.ang - st.theta1
    w = pre.w - st.q1d
    al = pre.al - st.q1dd
    u = _u(ang)
    bc = _Frame(p_bc, ang, v_bc, w, a_bc, al)
    s_c = ab.cylinder_com_fraction * chain.x0
    pc, vc, ac = bc.point(s_c * u)
    s_r = (st.x + chain.x0 - ab.rod_com_fraction * chain.x0)[:, None]
    pr, vr, ar = bc.point(s_r * u)
    xd = st.xd[:, None]
    vr = vr + xd * u
    ar = ar + 2.0 * _cross(w, xd * u) + st.xdd[:, None] * u
    bodies = []
    if m_c > 0:
        bodies.append(_Body(f"{joint.name}.cylinder", m_c, i_c, pc, ang, vc, w, ac, al))
    if m_r > 0:
        bodies.append(_Body(f"{joint.name}.rod", m_r, i_r, pr, ang, vr, w, ar, al))
    return bodies


# --- kinematics --------------------------------------------------------------------

def tcp_pose(robot: RobotModel, th, check_limits: bool = True):
    single, (th_b,) = _as_batch(th, n=robot.n)
    if check_limits:
        check_joint_limits(robot, th_b)
    z = np.zeros_like(th_b)
    mo = _motion(robot, th_b, z, z, with_bodies=False)
    if single:
        return PlanarPose(mo.tcp.p[0], mo.tcp.ang[0])
    return mo.tcp.p, wrap_angle(mo.tcp.ang)


def _jacobians(robot, mo, th_b):
    K = th_b.shape[0]
    J = np.zeros((K, 3, robot.n))
    Jd = np.zeros((K, 3, robot.n))
    for col, idx in enumerate(robot.actuated):
        joint = robot.joints[idx]
        pre = mo.pre_frames[idx]
        if joint.kind == CLOSED_CHAIN:
            r = mo.tcp.p - pre.p
            rd = mo.tcp.v - pre.v
            J[:, 0, col] = -r[:, 1]
            J[:, 1, col] = r[:, 0]
            J[:, 2, col] = 1.0
            Jd[:, 0, col] = -rd[:, 1]
            Jd[:, 1, col] = rd[:, 0]
        else:
            u = _rotate(pre.ang, np.asarray(joint.axis))
            J[:, :2, col] = u
            Jd[:, :2, col] = _cross(pre.w, u)
    return J, Jd


def tcp_jacobian(robot: RobotModel, th, check_limits: bool = True):
    """Planar geometric Jacobian, rows ``(x, z, angle)``."""
    single, (th_b,) = _as_batch(th, n=robot.n)
    if check_limits:
        check_joint_limits(robot, th_b)
    z = np.zeros_like(th_b)
    J, _ = _jacobians(robot, _motion(robot, th_b, z, z, with_bodies=False), th_b)
    return J[0] if single else J


def jacobian_dot(robot: RobotModel, th, thd, check_limits: bool = True):
    single, (th_b, thd_b) = _as_batch(th, thd, n=robot.n)
    if check_limits:
        check_joint_limits(robot, th_b)
    _, Jd = _jacobians(robot, _motion(robot, th_b, thd_b, np.zeros_like(th_b), with_bodies=False), th_b)
    return Jd[0] if single else Jd


def tcp_kinematics(robot: RobotModel, th, thd, thdd, check_limits: bool = False):
    """TCP position, velocity ``J thd`` and acceleration ``Jd thd + J thdd`` (batch)."""
    _, (th_b, thd_b, thdd_b) = _as_batch(th, thd, thdd, n=robot.n)
    if check_limits:
        check_joint_limits(robot, th_b)
    mo = _motion(robot, th_b, thd_b, thdd_b, with_bodies=False)
    J, Jd = _jacobians(robot, mo, th_b)
    vel = np.einsum("kij,kj->ki", J, thd_b)
    acc = np.einsum("kij,kj->ki", Jd, thd_b) + np.einsum("kij,kj->ki", J, thdd_b)
    pose = np.concatenate([mo.tcp.p, mo.tcp.ang[:, None]], axis=1)
    return pose, vel, acc


# --- dynamics ------------------------------------------------------------------------

@dataclass(frozen=True)
class DynamicsEvaluation:
    tau: np.ndarray       # (K, n) generalized forces on the independent coordinates
    f_x: np.ndarray       # (K, n_a) actuator forces, ordered like robot.actuated
    v_x: np.ndarray       # (K, n_a) actuator velocities
    chain_states: dict    # joint index -> ChainState


def evaluate_dynamics(robot: RobotModel, th, thd, thdd, check_limits: bool = True,
                      check_stroke: bool = True) -> DynamicsEvaluation:
    _, (th_b, thd_b, thdd_b) = _as_batch(th, thd, thdd, n=robot.n)
    if check_limits:
        check_joint_limits(robot, th_b)
    g = np.asarray(robot.gravity, dtype=float)
    mo = _motion(robot, th_b, thd_b, thdd_b, check_stroke=check_stroke)
    K, n = th_b.shape
    tau = np.zeros((K, n))
    wrench = np.asarray(robot.external_wrench, dtype=float)
    zero = np.zeros_like(th_b)
    for j in range(n):
        unit = np.zeros_like(th_b)
        unit[:, j] = 1.0
        part = _motion(robot, th_b, unit, zero)
        for body, pb in zip(mo.bodies, part.bodies):
            force = body.mass * (body.a - g)
            tau[:, j] += np.einsum("ki,ki->k", force, pb.v) + body.inertia * body.al * pb.w
        if np.any(wrench):
            tau[:, j] -= part.tcp.v @ wrench[:2] + part.tcp.w * wrench[2]
    f_x = np.empty_like(tau)
    v_x = np.empty_like(tau)
    for col, idx in enumerate(robot.actuated):
        if robot.joints[idx].kind == CLOSED_CHAIN:
            st = mo.chain_states[idx]
            f_x[:, col] = tau[:, col] * st.k[0]
            v_x[:, col] = st.xd
        else:
            f_x[:, col] = tau[:, col]
            v_x[:, col] = thd_b[:, col]
    if not (np.all(np.isfinite(f_x)) and np.all(np.isfinite(v_x))):
        raise ModelInconsistencyError("inverse dynamics produced non-finite values")
    return DynamicsEvaluation(tau, f_x, v_x, mo.chain_states)


def joint_torques(robot: RobotModel, th, thd, thdd, check_limits: bool = True):
    single = np.ndim(th) == 1
    tau = evaluate_dynamics(robot, th, thd, thdd, check_limits).tau
    return tau[0] if single else tau


def inverse_dynamics(robot: RobotModel, th, thd, thdd, check_limits: bool = True):
    """Actuator forces and velocities ``(f_x, v_x)`` for a joint-space motion."""
    single = np.ndim(th) == 1
    ev = evaluate_dynamics(robot, th, thd, thdd, check_limits)
    if single:
        return ev.f_x[0], ev.v_x[0]
    return ev.f_x, ev.v_x


def mass_matrix(robot: RobotModel, th) -> np.ndarray:
    """Joint-space inertia from unit-acceleration probes (gravity and rates removed)."""
    th = np.asarray(th, dtype=float)
    free = replace(robot, gravity=(0.0, 0.0), external_wrench=(0.0, 0.0, 0.0))
    z = np.zeros_like(th)
    base = joint_torques(free, th, z, z, check_limits=False)
    cols = [joint_torques(free, th, z, e, check_limits=False) - base for e in np.eye(robot.n)]
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class BodySnapshot:
    name: str
    mass: float
    inertia: float
    position: np.ndarray  # (K, 2) centre of mass
    angle: np.ndarray     # (K,)


def body_poses(robot: RobotModel, th) -> list[BodySnapshot]:
    """Centre-of-mass positions and orientations of every moving body."""
    _, (th_b,) = _as_batch(th, n=robot.n)
    z = np.zeros_like(th_b)
    mo = _motion(robot, th_b, z, z)
    return [BodySnapshot(b.name, b.mass, b.inertia, b.p, b.ang) for b in mo.bodies]


def structure_polyline(robot: RobotModel, th) -> dict:
    """Plot-ready coordinates of the backbone and each loop for one configuration."""
    th = np.asarray(th, dtype=float)[None, :]
    z = np.zeros_like(th)
    mo = _motion(robot, th, z, z, with_bodies=False)
    backbone = [[0.0, 0.0]] + [f.p[0].tolist() for f in mo.pre_frames] + [mo.tcp.p[0].tolist()]
    loops = []
    for idx in robot.chain_joints:
        chain = robot.joints[idx].chain
        pre = mo.pre_frames[idx]
        pivot = pre.p[0]
        base = pivot + _rotate(pre.ang, chain.L * _u(np.array(chain.base_mount_angle)))[0]
        tip = pivot + _rotate(pre.ang + th[0, robot.actuated.index(idx)],
                              chain.L1 * _u(np.array(chain.rod_mount_angle)))[0]
        loops.append({"joint": robot.joints[idx].name, "pivot": pivot.tolist(),
                      "base_mount": base.tolist(), "rod_mount": tip.tolist()})
    return {"backbone": backbone, "loops": loops}
