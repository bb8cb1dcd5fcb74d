"""Clamped uniform B-spline parameterisation of joint trajectories.

Control points are stacked joint-major: ``c = [c_joint0 (N), c_joint1 (N), ...]``.
The per-joint basis row is shared, so ``B(t)`` is block diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline

from .errors import ConfigurationError, FittingError, RangeError

SPAN_SLACK = 1e-12


@dataclass(frozen=True)
class CollocationGrid:
    t0: float
    dt: float
    M: int

    def __post_init__(self):
        if self.M < 2:
            raise ConfigurationError("collocation grid needs M >= 2 partitions")
        if not self.dt > 0:
            raise ConfigurationError("dt must be > 0")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.M + 1)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * self.M

    @classmethod
    def from_times(cls, times) -> "CollocationGrid":
        t = np.asarray(times, dtype=float)
        if t.ndim != 1 or t.size < 3:
            raise ConfigurationError("need at least three collocation times")
        steps = np.diff(t)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-12 * max(1.0, abs(t[-1])):
            raise ConfigurationError("collocation times must be uniformly spaced")
        return cls(float(t[0]), float(steps.mean()), t.size - 1)


def clamped_knots(degree: int, N: int, t0: float, t1: float) -> np.ndarray:
    inner = np.linspace(t0, t1, N - degree + 1)
    return np.concatenate([np.full(degree, t0), inner, np.full(degree, t1)])


class SplineBasis:
    """Basis rows and their first two time derivatives on a collocation grid."""

    def __init__(self, degree: int, N: int, times, n_joints: int = 1):
        if degree < 3:
            raise ConfigurationError("degree must be >= 3")
        if N <= degree:
            raise ConfigurationError(f"N={N} must exceed degree={degree}")
        times = np.asarray(times, dtype=float)
        self.degree = int(degree)
        self.N = int(N)
        self.n = int(n_joints)
        self.times = times
        self.t0 = float(times[0])
        self.t1 = float(times[-1])
        self.knots = clamped_knots(degree, N, self.t0, self.t1)
        self._spl = BSpline(self.knots, np.eye(N), degree, extrapolate=False)
        self._d1 = self._spl.derivative(1)
        self._d2 = self._spl.derivative(2)
        self.B, self.Bd, self.Bdd = self.rows(times)

    def rows(self, t):
        """Basis rows ``(b, b', b'')`` at times ``t``, each of shape ``(len(t), N)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < self.t0 - SPAN_SLACK) or np.any(t > self.t1 + SPAN_SLACK):
            raise RangeError(f"time outside knot span [{self.t0}, {self.t1}]")
        t = np.clip(t, self.t0, self.t1)
        return self._spl(t), self._d1(t), self._d2(t)

    @cached_property
    def eye_n(self):
        return np.eye(self.n)

    def matrix(self, k: int, order: int = 0) -> np.ndarray:
        """Block-diagonal ``n x nN`` matrix at collocation index ``k``."""
        row = (self.B, self.Bd, self.Bdd)[order][k]
        return np.kron(self.eye_n, row[None, :])

    def split(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if c.size != self.n * self.N:
            raise ConfigurationError(f"expected {self.n * self.N} control points, got {c.size}")
        return c.reshape(self.n, self.N)

    def evaluate_grid(self, c):
        """``(theta, thetad, thetadd)`` at every collocation time, each ``(K, n)``."""
        C = self.split(c)
        return self.B @ C.T, self.Bd @ C.T, self.Bdd @ C.T

    def evaluate(self, c, t):
        C = self.split(c)
        b, bd, bdd = self.rows(t)
        out = (b @ C.T, bd @ C.T, bdd @ C.T)
        if np.ndim(t) == 0:
            return tuple(o[0] for o in out)
        return out


def build_basis(degree: int, N: int, times, n_joints: int = 1) -> SplineBasis:
    return SplineBasis(degree, N, times, n_joints)


def evaluate(basis: SplineBasis, c, t):
    return basis.evaluate(c, t)


@dataclass(frozen=True)
class FitResult:
    c: np.ndarray
    residual: float  # Frobenius norm of B c - samples
    rms: float


def fit_initial_controls(basis: SplineBasis, sample_times, samples) -> FitResult:
    """Least-squares control points reproducing joint samples of shape ``(S, n)``."""
    y = np.asarray(samples, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[1] != basis.n:
        raise ConfigurationError(f"samples have {y.shape[1]} joints, basis has {basis.n}")
    if y.shape[0] < basis.N:
        raise FittingError(f"need at least N={basis.N} samples, got {y.shape[0]}")
    A, _, _ = basis.rows(sample_times)
    sol, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < basis.N:
        raise FittingError(f"basis matrix is rank deficient ({rank} < {basis.N})")
    resid = A @ sol - y
    res = float(np.linalg.norm(resid))
    return FitResult(c=sol.T.reshape(-1), residual=res, rms=res / np.sqrt(resid.size))
