"""One-DoF four-link closed chain driven by a linear actuator.

Geometry (all planar, angles counter-clockwise):

* the passive pivot ``B1`` sits at the origin of the chain frame;
* the actuator base mount ``Bc`` is at distance ``L`` from the pivot, direction
  ``alpha`` in the chain frame;
* the rod-end mount ``Tc`` sits on the driven link at distance ``L1`` from the
  pivot, direction ``beta`` in the driven-link frame;
* the actuator spans ``Bc -> Tc`` with pin-to-pin length ``x + x0``,
  ``x0 = Lc + Lc0``.

The inner angles ``q, q1, q2`` (at ``B1``, ``Bc``, ``Tc``) take the negative
arccos branch and sum to ``-pi``. With the driven link turning by
``theta = q + psi`` and the two lower-chain pins measured clockwise,
the offsets follow from the mounts as ``psi = alpha - beta``,
``psi1 = -alpha - pi`` and ``psi2 = beta`` (mod 2 pi).

All functions broadcast over array-valued ``x`` / ``theta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    GeometryInfeasibleError,
    SingularConfigurationError,
    StrokeLimitError,
)

ACOS_SLACK = 1e-12
STROKE_SLACK = 1e-12  # m, round-off allowance at the stroke ends
EPS_SING = 1e-6


def wrap_angle(a):
    """Wrap to ``(-pi, pi]``."""
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    return float(w) if w.ndim == 0 else w


@dataclass(frozen=True)
class ClosedChainParams:
    L: float
    L1: float
    Lc: float
    Lc0: float
    psi: float
    psi1: float
    psi2: float

    def __post_init__(self):
        for name in ("L", "L1", "Lc", "Lc0"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise GeometryInfeasibleError(f"{name} must be > 0, got {value}")

    @property
    def x0(self) -> float:
        return self.Lc + self.Lc0

    @property
    def xi(self) -> np.ndarray:
        """Decision-vector block ``[L, Lc0, Lc]``."""
        return np.array([self.L, self.Lc0, self.Lc])

    @property
    def base_mount_angle(self) -> float:
        return float(wrap_angle(-self.psi1 - math.pi))

    @property
    def rod_mount_angle(self) -> float:
        return float(wrap_angle(self.psi2))

    @classmethod
    def from_mounts(cls, L, L1, Lc, Lc0, base_angle, rod_angle):
        """Offsets derived from mount directions; ``psi`` is placed in ``[0, 2 pi)``."""
        psi = float(np.mod(base_angle - rod_angle, 2.0 * math.pi))
        return cls(L, L1, Lc, Lc0, psi, float(wrap_angle(-base_angle - math.pi)), float(wrap_angle(rod_angle)))

    @classmethod
    def from_mount_points(cls, base_point, rod_point, Lc, Lc0):
        bx, bz = base_point
        rx, rz = rod_point
        return cls.from_mounts(math.hypot(bx, bz), math.hypot(rx, rz), Lc, Lc0,
                               math.atan2(bz, bx), math.atan2(rz, rx))

    def with_xi(self, xi) -> "ClosedChainParams":
        L, Lc0, Lc = (float(v) for v in xi)
        return replace(self, L=L, Lc0=Lc0, Lc=Lc)

    def check_feasible(self) -> None:
        """Strict triangle inequalities over the whole stroke ``[0, Lc]``."""
        lo = abs(self.L - self.L1)
        hi = self.L + self.L1
        if not (lo < self.x0 and self.x0 + self.Lc < hi):
            raise GeometryInfeasibleError(
                f"stroke span [{self.x0}, {self.x0 + self.Lc}] not inside ({lo}, {hi})"
            )

    def offset_closure_error(self) -> float:
        """``psi + psi1 + psi2 + pi`` wrapped; zero for a consistent mechanism."""
        return float(wrap_angle(self.psi + self.psi1 + self.psi2 + math.pi))


@dataclass(frozen=True)
class ChainState:
    x: np.ndarray
    xd: np.ndarray
    xdd: np.ndarray
    q: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    qd: np.ndarray
    q1d: np.ndarray
    q2d: np.ndarray
    qdd: np.ndarray
    q1dd: np.ndarray
    q2dd: np.ndarray
    theta: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    k: tuple
    kd: tuple

    # passive-joint rates equal inner-angle rates
    @property
    def thetad(self):
        return self.qd

    @property
    def theta1d(self):
        return self.q1d

    @property
    def theta2d(self):
        return self.q2d


def _check_stroke(params, x):
    x = np.asarray(x, dtype=float)
    bad = (x < -STROKE_SLACK) | (x > params.Lc + STROKE_SLACK)
    if np.any(bad):
        value = x[bad].flat[0] if x.ndim else float(x)
        raise StrokeLimitError(f"stroke {value} outside [0, {params.Lc}]", float(value))


def _acos(arg, label):
    arg = np.asarray(arg, dtype=float)
    if np.any(~np.isfinite(arg)) or np.any(np.abs(arg) > 1.0 + ACOS_SLACK):
        raise GeometryInfeasibleError(f"{label}: arccos argument outside [-1, 1]")
    return np.arccos(np.clip(arg, -1.0, 1.0))


def _scalar(a):
    return float(a) if np.ndim(a) == 0 else a


def inner_angles(params: ClosedChainParams, x, check_stroke: bool = True):
    if check_stroke:
        _check_stroke(params, x)
    d = np.asarray(x, dtype=float) + params.x0
    L, L1 = params.L, params.L1
    q = -_acos((d**2 - L**2 - L1**2) / (-2.0 * L * L1), "q")
    q1 = -_acos((L1**2 - d**2 - L**2) / (-2.0 * d * L), "q1")
    q2 = -_acos((L**2 - d**2 - L1**2) / (-2.0 * d * L1), "q2")
    return _scalar(q), _scalar(q1), _scalar(q2)


def actuator_from_angle(params: ClosedChainParams, theta, check_stroke: bool = True):
    """Stroke ``x`` producing driven-link angle ``theta`` (law of cosines)."""
    q = np.asarray(wrap_angle(np.asarray(theta, dtype=float) - params.psi))
    if np.any(~((q > -math.pi) & (q < 0.0))):
        raise GeometryInfeasibleError("theta - psi must lie in (-pi, 0)")
    d = np.sqrt(params.L**2 + params.L1**2 - 2.0 * params.L * params.L1 * np.cos(q))
    x = d - params.x0
    if check_stroke:
        _check_stroke(params, x)
    return _scalar(x)


def _guard(angles):
    for name, a in zip(("q", "q1", "q2"), angles):
        a = np.asarray(a)
        if np.any(a > -EPS_SING) or np.any(a < -math.pi + EPS_SING):
            raise SingularConfigurationError(f"{name} within {EPS_SING} rad of a degenerate triangle")


def _k_from_angles(params, d, q, q1, q2):
    L, L1 = params.L, params.L1
    k1 = d / (L * L1 * np.sin(q))
    k2 = -(d - L * np.cos(q1)) / (d * L * np.sin(q1))
    k3 = -(d - L1 * np.cos(q2)) / (d * L1 * np.sin(q2))
    return k1, k2, k3


def _dk_dx(params, d, q, q1, q2, k1, k2, k3):
    L, L1 = params.L, params.L1
    dk1 = k1 / d - k1**2 * np.cos(q) / np.sin(q)

    def side(length, qi, ki):
        den = d * length * np.sin(qi)
        dnum = 1.0 + length * np.sin(qi) * ki
        dden = length * np.sin(qi) + d * length * np.cos(qi) * ki
        return -dnum / den - ki * dden / den

    return dk1, side(L, q1, k2), side(L1, q2, k3)


def k_coefficients(params: ClosedChainParams, x, check_stroke: bool = True):
    """Holonomic velocity ratios ``(dq/dx, dq1/dx, dq2/dx)``."""
    q, q1, q2 = inner_angles(params, x, check_stroke)
    _guard((q, q1, q2))
    d = np.asarray(x, dtype=float) + params.x0
    return tuple(_scalar(k) for k in _k_from_angles(params, d, q, q1, q2))


def k_derivatives(params: ClosedChainParams, x, check_stroke: bool = True):
    """``d k_i / dx``; multiply by ``xdot`` for the time derivatives."""
    q, q1, q2 = inner_angles(params, x, check_stroke)
    _guard((q, q1, q2))
    d = np.asarray(x, dtype=float) + params.x0
    ks = _k_from_angles(params, d, q, q1, q2)
    return tuple(_scalar(v) for v in _dk_dx(params, d, q, q1, q2, *ks))


def chain_rates(params: ClosedChainParams, x, xd, check_stroke: bool = True):
    k1, k2, k3 = k_coefficients(params, x, check_stroke)
    xd = np.asarray(xd, dtype=float)
    return _scalar(k1 * xd), _scalar(k2 * xd), _scalar(k3 * xd)


def chain_accelerations(params: ClosedChainParams, x, xd, xdd, check_stroke: bool = True):
    k = k_coefficients(params, x, check_stroke)
    dk = k_derivatives(params, x, check_stroke)
    xd = np.asarray(xd, dtype=float)
    xdd = np.asarray(xdd, dtype=float)
    return tuple(_scalar(dki * xd * xd + ki * xdd) for ki, dki in zip(k, dk))


def chain_state_from_stroke(params: ClosedChainParams, x, xd, xdd, check_stroke: bool = True) -> ChainState:
    x = np.asarray(x, dtype=float)
    xd = np.asarray(xd, dtype=float)
    xdd = np.asarray(xdd, dtype=float)
    q, q1, q2 = (np.asarray(a) for a in inner_angles(params, x, check_stroke))
    _guard((q, q1, q2))
    d = x + params.x0
    k = _k_from_angles(params, d, q, q1, q2)
    dk = _dk_dx(params, d, q, q1, q2, *k)
    kd = tuple(dki * xd for dki in dk)
    rates = tuple(ki * xd for ki in k)
    accs = tuple(kdi * xd + ki * xdd for ki, kdi in zip(k, kd))
    return ChainState(
        x=x, xd=xd, xdd=xdd, q=q, q1=q1, q2=q2,
        qd=rates[0], q1d=rates[1], q2d=rates[2],
        qdd=accs[0], q1dd=accs[1], q2dd=accs[2],
        theta=q + params.psi, theta1=q1 + params.psi1, theta2=q2 + params.psi2,
        k=k, kd=kd,
    )


def chain_state(params: ClosedChainParams, theta, thetad, thetadd, check_stroke: bool = True) -> ChainState:
    """Full loop state from the driven-link angle and its derivatives."""
    x = np.asarray(actuator_from_angle(params, theta, check_stroke))
    q = np.asarray(wrap_angle(np.asarray(theta, dtype=float) - params.psi))
    d = x + params.x0
    # recover the remaining angles from the same triangle
    q1, q2 = (np.asarray(a) for a in inner_angles(params, x, check_stroke=False)[1:])
    _guard((q, q1, q2))
    k1, k2, k3 = _k_from_angles(params, d, q, q1, q2)
    dk = _dk_dx(params, d, q, q1, q2, k1, k2, k3)
    xd = np.asarray(thetad, dtype=float) / k1
    xdd = (np.asarray(thetadd, dtype=float) - dk[0] * xd * xd) / k1
    k = (k1, k2, k3)
    kd = tuple(dki * xd for dki in dk)
    rates = tuple(ki * xd for ki in k)
    accs = tuple(kdi * xd + ki * xdd for ki, kdi in zip(k, kd))
    return ChainState(
        x=x, xd=xd, xdd=xdd, q=q, q1=q1, q2=q2,
        qd=rates[0], q1d=rates[1], q2d=rates[2],
        qdd=accs[0], q1dd=accs[1], q2dd=accs[2],
        theta=np.asarray(theta, dtype=float),
        theta1=q1 + params.psi1, theta2=q2 + params.psi2,
        k=k, kd=kd,
    )


def _rot_apply(a, v):
    """Rotate vectors ``v`` (last axis 2) by angles ``a`` (broadcast)."""
    c, s = np.cos(a), np.sin(a)
    return np.stack([c * v[..., 0] - s * v[..., 1], s * v[..., 0] + c * v[..., 1]], axis=-1)


def _out(a):
    return a if np.ndim(a) else float(a)


def upper_chain_tip(params: ClosedChainParams, theta):
    """Pose of ``T1`` in the chain frame: pivot -> rotate ``theta`` -> ``L1`` along ``beta``."""
    theta = np.asarray(theta, dtype=float)
    a = theta + params.rod_mount_angle
    return np.stack([params.L1 * np.cos(a), params.L1 * np.sin(a)], axis=-1), _out(theta * 1.0)


def lower_chain_tip(params: ClosedChainParams, theta1, x, theta2):
    """Pose of ``T2``: base mount -> pin ``theta1`` (clockwise) -> stroke -> pin ``theta2`` (clockwise)."""
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    alpha = params.base_mount_angle
    base = params.L * np.array([math.cos(alpha), math.sin(alpha)])
    d = np.asarray(x, dtype=float) + params.x0
    tip = base + d[..., None] * np.stack([np.cos(-theta1), np.sin(-theta1)], axis=-1)
    return tip, _out(-theta1 - theta2)


def triangle_closure_residual(q, q1, q2):
    """``q + q1 + q2 + pi``; zero for any assembled triangle."""
    return np.asarray(q) + np.asarray(q1) + np.asarray(q2) + math.pi


def loop_closure_residual(params: ClosedChainParams, theta, theta1, x, theta2,
                          base_position=(0.0, 0.0), base_angle=0.0) -> np.ndarray:
    """``T1 - T2`` as ``(dx, dz, dangle)`` expressed in the common base frame.

    Both tips are placed in the world through the same base pose and the
    difference is rotated back, so the result does not depend on the base pose.
    Array inputs broadcast; the result then has a trailing axis of length 3.
    """
    base_angle = np.asarray(base_angle, dtype=float)
    p0 = np.asarray(base_position, dtype=float)
    p1, a1 = upper_chain_tip(params, theta)
    p2, a2 = lower_chain_tip(params, theta1, x, theta2)
    w1 = p0 + _rot_apply(base_angle, p1)
    w2 = p0 + _rot_apply(base_angle, p2)
    dp = _rot_apply(-base_angle, w1 - w2)
    da = wrap_angle((base_angle + a1) - (base_angle + a2))
    return np.concatenate([dp, np.asarray(da)[..., None]], axis=-1)
