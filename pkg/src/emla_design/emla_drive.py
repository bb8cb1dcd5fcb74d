"""PMSM + gearbox + ball-screw drivetrain of an electromechanical linear actuator.

The motor is modelled in the rotor-aligned dq frame. Operating points are
steady state (no current or speed transients), with the ``i_d = 0`` current
policy and a viscous + Coulomb rotor friction term.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, ModelInconsistencyError, RangeError

ETA_FLOOR = 0.05
ZERO_POWER_TOL = 1e-9  # W


@dataclass(frozen=True)
class PmsmParams:
    stator_resistance: float
    inductance_d: float
    inductance_q: float
    pole_pairs: int
    pm_flux: float
    rotor_inertia: float = 0.0
    viscous_friction: float = 1e-4
    coulomb_friction: float = 0.05

    def __post_init__(self):
        positive = ("stator_resistance", "inductance_d", "inductance_q", "pm_flux")
        for name in positive:
            if not getattr(self, name) > 0:
                raise RangeError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("rotor_inertia", "viscous_friction", "coulomb_friction"):
            if not getattr(self, name) >= 0:
                raise RangeError(f"{name} must be >= 0, got {getattr(self, name)}")
        if int(self.pole_pairs) != self.pole_pairs or self.pole_pairs < 1:
            raise RangeError(f"pole_pairs must be a positive integer, got {self.pole_pairs}")


@dataclass(frozen=True)
class DrivetrainParams:
    screw_lead: float  # m per revolution
    gear_ratio: float
    translating_mass: float = 0.0
    load_viscous: float = 0.0
    force_limits: tuple[float, float] = (-1e5, 1e5)
    velocity_limits: tuple[float, float] = (-0.2, 0.2)

    def __post_init__(self):
        if not self.screw_lead > 0:
            raise RangeError("screw_lead must be > 0")
        if not self.gear_ratio > 0:
            raise RangeError("gear_ratio must be > 0")
        if self.translating_mass < 0 or self.load_viscous < 0:
            raise RangeError("translating_mass and load_viscous must be >= 0")
        object.__setattr__(self, "force_limits", tuple(float(v) for v in self.force_limits))
        object.__setattr__(self, "velocity_limits", tuple(float(v) for v in self.velocity_limits))
        if not self.force_limits[0] < self.force_limits[1]:
            raise RangeError("force_limits must satisfy low < up")
        if not self.velocity_limits[0] < self.velocity_limits[1]:
            raise RangeError("velocity_limits must satisfy low < up")

    @property
    def transmission(self) -> float:
        """Motor angle per unit of screw travel, rad/m."""
        return 2.0 * math.pi * self.gear_ratio / self.screw_lead


@dataclass(frozen=True)
class EmlaUnit:
    name: str
    pmsm: PmsmParams
    drive: DrivetrainParams

    def to_dict(self) -> dict:
        drive = asdict(self.drive)
        drive["force_limits"] = list(drive["force_limits"])
        drive["velocity_limits"] = list(drive["velocity_limits"])
        return {"name": self.name, "pmsm": asdict(self.pmsm), "drivetrain": drive}

    def efficiency_map(self, n_force: int = 41, n_velocity: int = 41) -> "EfficiencyMap":
        return build_efficiency_map(self.pmsm, self.drive, n_force, n_velocity, self.name)

    @classmethod
    def from_dict(cls, data: dict) -> "EmlaUnit":
        return cls(
            name=data.get("name", "emla"),
            pmsm=PmsmParams(**data["pmsm"]),
            drive=DrivetrainParams(**data["drivetrain"]),
        )


@dataclass(frozen=True)
class OperatingPoint:
    i_d: float
    i_q: float
    V_d: float
    V_q: float
    V_0: float
    tau_m: float
    tau_sm: float
    omega_m: float
    omega_e: float
    f_sm: float
    f_x: float
    v_x: float
    P_mech: float
    P_elec: float
    eta: float
    V_LL: float
    I_LL: float
    power_factor: float
    zero_power: bool = False


def park_matrix(electrical_angle: float) -> np.ndarray:
    a = float(electrical_angle)
    if not math.isfinite(a):
        raise DomainError(f"electrical angle must be finite, got {electrical_angle}")
    shifts = np.array([0.0, -2.0 * math.pi / 3.0, 2.0 * math.pi / 3.0])
    return np.array([np.cos(a + shifts), -np.sin(a + shifts), [0.5, 0.5, 0.5]])


def abc_to_dq(v_abc, electrical_angle: float) -> tuple[float, float, float]:
    """Amplitude-invariant Park transform ``(2/3) P v_abc``."""
    v = np.asarray(v_abc, dtype=float)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise DomainError("v_abc must be a finite 3-vector")
    dq0 = (2.0 / 3.0) * park_matrix(electrical_angle) @ v
    return float(dq0[0]), float(dq0[1]), float(dq0[2])


def electromagnetic_torque(i_d, i_q, params: PmsmParams):
    return 1.5 * params.pole_pairs * i_q * (params.pm_flux + (params.inductance_d - params.inductance_q) * i_d)


def _efficiency(p_mech: float, p_elec: float) -> tuple[float, bool]:
    if abs(p_mech) < ZERO_POWER_TOL and abs(p_elec) < ZERO_POWER_TOL:
        return ETA_FLOOR, True
    if p_mech > 0.0:
        if p_elec <= 0.0:
            raise ModelInconsistencyError(
                f"non-positive electrical power {p_elec} W for mechanical output {p_mech} W"
            )
        eta = p_mech / p_elec
    elif p_mech < 0.0 and p_elec < 0.0:
        # regeneration: electrical output over mechanical input
        eta = p_elec / p_mech
    else:
        eta = 0.0
    return min(max(eta, ETA_FLOOR), 1.0), False


def steady_state_operating_point(
    f_x: float, v_x: float, pmsm: PmsmParams, drive: DrivetrainParams
) -> OperatingPoint:
    f_x = float(f_x)
    v_x = float(v_x)
    if not (math.isfinite(f_x) and math.isfinite(v_x)):
        raise DomainError("force and velocity must be finite")
    f_lo, f_up = drive.force_limits
    v_lo, v_up = drive.velocity_limits
    if not (f_lo <= f_x <= f_up):
        raise RangeError(f"f_x={f_x} N outside [{f_lo}, {f_up}]")
    if not (v_lo <= v_x <= v_up):
        raise RangeError(f"v_x={v_x} m/s outside [{v_lo}, {v_up}]")

    p = pmsm.pole_pairs
    omega_m = drive.transmission * v_x
    f_sm = f_x + drive.load_viscous * v_x
    tau_sm = f_sm / drive.transmission
    tau_m = tau_sm + pmsm.viscous_friction * omega_m + pmsm.coulomb_friction * np.sign(omega_m)
    i_d = 0.0
    i_q = tau_m / (1.5 * p * (pmsm.pm_flux + (pmsm.inductance_d - pmsm.inductance_q) * i_d))
    V_d = pmsm.stator_resistance * i_d - p * omega_m * pmsm.inductance_q * i_q
    V_q = pmsm.stator_resistance * i_q + p * omega_m * (pmsm.inductance_d * i_d + pmsm.pm_flux)
    p_mech = f_x * v_x
    p_elec = 1.5 * (V_d * i_d + V_q * i_q)
    eta, zero = _efficiency(p_mech, p_elec)

    v_peak = math.hypot(V_d, V_q)
    i_peak = math.hypot(i_d, i_q)
    v_ll = math.sqrt(3.0) * v_peak / math.sqrt(2.0)
    i_ll = i_peak / math.sqrt(2.0)
    apparent = 1.5 * v_peak * i_peak
    power_factor = p_elec / apparent if apparent > 0.0 else 1.0
    return OperatingPoint(
        i_d=i_d, i_q=float(i_q), V_d=float(V_d), V_q=float(V_q), V_0=0.0,
        tau_m=float(tau_m), tau_sm=float(tau_sm), omega_m=float(omega_m),
        omega_e=float(p * omega_m), f_sm=float(f_sm), f_x=f_x, v_x=v_x,
        P_mech=float(p_mech), P_elec=float(p_elec), eta=float(eta),
        V_LL=v_ll, I_LL=i_ll, power_factor=float(power_factor), zero_power=zero,
    )


@dataclass(frozen=True, eq=False)
class EfficiencyMap:
    force_axis: np.ndarray
    velocity_axis: np.ndarray
    values: np.ndarray  # shape (len(force_axis), len(velocity_axis))
    eta_floor: float = ETA_FLOOR
    name: str = field(default="", compare=False)

    def __post_init__(self):
        fa = np.asarray(self.force_axis, dtype=float)
        va = np.asarray(self.velocity_axis, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if fa.ndim != 1 or va.ndim != 1 or fa.size < 2 or va.size < 2:
            raise RangeError("map axes need at least two nodes each")
        if np.any(np.diff(fa) <= 0) or np.any(np.diff(va) <= 0):
            raise RangeError("map axes must be strictly increasing")
        if vals.shape != (fa.size, va.size):
            raise RangeError(f"values shape {vals.shape} does not match axes {(fa.size, va.size)}")
        for name, arr in (("force_axis", fa), ("velocity_axis", va), ("values", vals)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


class MapBuildError(ModelInconsistencyError):
    """Operating-point failure at a specific grid node."""

    def __init__(self, message, f_x, v_x):
        super().__init__(message)
        self.f_x = f_x
        self.v_x = v_x


def build_efficiency_map(
    pmsm: PmsmParams, drive: DrivetrainParams, n_force: int, n_velocity: int, name: str = ""
) -> EfficiencyMap:
    if n_force < 2 or n_velocity < 2:
        raise RangeError("n_force and n_velocity must be >= 2")
    fa = np.linspace(drive.force_limits[0], drive.force_limits[1], n_force)
    va = np.linspace(drive.velocity_limits[0], drive.velocity_limits[1], n_velocity)
    values = np.empty((n_force, n_velocity))
    for i, f in enumerate(fa):
        for j, v in enumerate(va):
            try:
                values[i, j] = steady_state_operating_point(f, v, pmsm, drive).eta
            except (ModelInconsistencyError, RangeError) as exc:
                raise MapBuildError(f"at f_x={f}, v_x={v}: {exc}", f, v) from exc
    return EfficiencyMap(fa, va, values, name=name)


def _cell(axis: np.ndarray, q: np.ndarray):
    q = np.clip(q, axis[0], axis[-1])
    i = np.clip(np.searchsorted(axis, q, side="right") - 1, 0, axis.size - 2)
    t = (q - axis[i]) / (axis[i + 1] - axis[i])
    return i, t


def lookup_efficiency(emap: EfficiencyMap, f_x, v_x):
    """Bilinear interpolation of the map, clamped to the axis rectangle and to ``[floor, 1]``.

    Accepts scalars or broadcastable arrays.
    """
    f = np.asarray(f_x, dtype=float)
    v = np.asarray(v_x, dtype=float)
    f, v = np.broadcast_arrays(f, v)
    i, t = _cell(emap.force_axis, f)
    j, s = _cell(emap.velocity_axis, v)
    z = emap.values
    eta = (
        (1.0 - t) * (1.0 - s) * z[i, j]
        + t * (1.0 - s) * z[i + 1, j]
        + (1.0 - t) * s * z[i, j + 1]
        + t * s * z[i + 1, j + 1]
    )
    eta = np.clip(eta, emap.eta_floor, 1.0)
    return float(eta) if eta.ndim == 0 else eta


def write_map_csv(emap: EfficiencyMap, path) -> Path:
    """Write ``v_x,f_x,eta`` rows; outer loop over force nodes, inner over velocity nodes."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(["v_x", "f_x", "eta"])
        for i, f in enumerate(emap.force_axis):
            for j, v in enumerate(emap.velocity_axis):
                writer.writerow([f"{v:.9g}", f"{f:.9g}", f"{emap.values[i, j]:.9g}"])
    return path


def read_map_csv(path, eta_floor: float = ETA_FLOOR) -> EfficiencyMap:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    v = np.array([float(r["v_x"]) for r in rows])
    f = np.array([float(r["f_x"]) for r in rows])
    eta = np.array([float(r["eta"]) for r in rows])
    fa = np.unique(f)
    va = np.unique(v)
    values = eta.reshape(fa.size, va.size)
    return EfficiencyMap(fa, va, values, eta_floor=eta_floor)
