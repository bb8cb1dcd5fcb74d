"""Dense SQP with an exact L1 merit line search.

Subproblems are solved in two stages: the linearised equalities are handled
by an SVD null-space split (so redundant or zero rows are harmless), and the
remaining inequality QP goes to a small primal-dual interior-point method
with an elastic slack on every row. Derivatives come from central finite
differences; the Lagrangian Hessian is a damped BFGS approximation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverBreakdown

log = logging.getLogger(__name__)


# --- inequality QP -------------------------------------------------------------------

@dataclass
class QpSolution:
    x: np.ndarray
    multipliers: np.ndarray
    iterations: int


def solve_inequality_qp(Q, c, A, b, tol=1e-10, max_iter=100) -> QpSolution:
    """Minimise ``0.5 x'Qx + c'x`` subject to ``A x <= b`` (Mehrotra predictor-corrector).

    ``Q + A' D A`` must be positive definite for positive ``D``; this holds
    when ``Q`` is positive semidefinite and every direction of ``Q``'s null
    space is bounded by some row of ``A``.
    """
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, c.size)
    b = np.asarray(b, dtype=float)
    n = c.size
    if A.shape[0] == 0:
        x = np.linalg.solve(Q, -c)
        return QpSolution(x, np.zeros(0), 0)
    x = np.zeros(n)
    s = np.maximum(b - A @ x, 1.0)
    lam = np.ones_like(s)
    m = s.size
    scale_d = 1.0 + np.max(np.abs(c))
    scale_p = 1.0 + np.max(np.abs(b))
    reg = 1e-12 * (1.0 + np.max(np.abs(np.diag(Q))))

    def newton(rd, rp, rc):
        D = lam / s
        K = Q + A.T @ (D[:, None] * A) + reg * np.eye(n)
        rhs = -rd - A.T @ (D * rp + rc / s)
        try:
            L = np.linalg.cholesky(K)
            dx = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(K, rhs, rcond=None)[0]
        dlam = D * (A @ dx + rp) + rc / s
        ds = (rc - s * dlam) / lam
        return dx, ds, dlam

    # starting point heuristic: one affine step from a unit start, then shift
    # slacks and multipliers away from zero
    rd0 = Q @ x + c + A.T @ lam
    rp0 = A @ x + s - b
    dx, ds, dl = newton(rd0, rp0, -s * lam)
    x = x + dx
    s = np.maximum(np.abs(s + ds), 1.0)
    lam = np.maximum(np.abs(lam + dl), 1.0)

    def max_step(v, dv):
        neg = dv < 0
        if not np.any(neg):
            return 1.0
        return min(1.0, float(np.min(-v[neg] / dv[neg])))

    for it in range(1, max_iter + 1):
        rd = Q @ x + c + A.T @ lam
        rp = A @ x + s - b
        mu = float(s @ lam) / m
        if (np.max(np.abs(rd)) <= tol * scale_d and np.max(np.abs(rp)) <= tol * scale_p
                and mu <= tol * 1e-2):
            return QpSolution(x, lam, it)
        dx, ds, dl = newton(rd, rp, -s * lam)
        a_aff = min(max_step(s, ds), max_step(lam, dl))
        mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dl)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        rc = -s * lam - ds * dl + sigma * mu
        dx, ds, dl = newton(rd, rp, rc)
        alpha = min(1.0, 0.995 * min(max_step(s, ds), max_step(lam, dl)))
        x = x + alpha * dx
        s = np.maximum(s + alpha * ds, 1e-300)
        lam = np.maximum(lam + alpha * dl, 1e-300)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(lam))):
            raise SolverBreakdown("QP interior-point iterate became non-finite")
    rd = Q @ x + c + A.T @ lam
    rp = A @ x + s - b
    if np.max(np.abs(rd)) > 1e-6 * scale_d or np.max(np.abs(rp)) > 1e-6 * scale_p:
        raise SolverBreakdown(f"QP did not converge in {max_iter} iterations")
    return QpSolution(x, lam, max_iter)


# --- SQP ---------------------------------------------------------------------------------

@dataclass
class SolverConfig:
    max_iterations: int = 200
    feasibility_tol: float = 1e-6
    optimality_tol: float = 1e-6
    fd_step: float = 1e-6          # relative central-difference step
    step_tol: float = 1e-8
    stall_iterations: int = 5
    penalty_init: float = 1.0
    penalty_margin: float = 1.5
    elastic_weight: float = 1e6
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    rank_tol: float = 1e-9
    seed: int | None = None  # reserved for multistart

    def __post_init__(self):
        for name in ("feasibility_tol", "optimality_tol", "fd_step", "step_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    violation: float
    merit_before: float
    merit_after: float
    penalty: float
    step_length: float
    step_norm: float
    kkt: float


@dataclass
class SqpResult:
    x: np.ndarray
    objective: float
    violation: float
    status: str
    success: bool
    iterations: int
    history: list = field(default_factory=list)
    x_initial: np.ndarray | None = None
    objective_initial: float = float("nan")
    violation_initial: float = float("nan")
    evaluations: int = 0
    wall_time: float = 0.0

    @property
    def objective_trace(self):
        return [self.objective_initial] + [h.objective for h in self.history]

    @property
    def violation_trace(self):
        return [self.violation_initial] + [h.violation for h in self.history]


def _violation_l1(h, g):
    return float(np.sum(np.abs(h)) + np.sum(np.maximum(g, 0.0)))


def _violation_inf(h, g):
    parts = [np.abs(h), np.maximum(g, 0.0)]
    vals = [p.max() for p in parts if p.size]
    return float(max(vals)) if vals else 0.0


class _Counter:
    def __init__(self, fun):
        self.fun = fun
        self.count = 0

    def __call__(self, z):
        self.count += 1
        f, h, g = self.fun(z)
        return float(f), np.asarray(h, dtype=float), np.asarray(g, dtype=float)


def fd_jacobians(fun, z, rel_step, lb=None, ub=None):
    """Central-difference gradient of ``f`` and Jacobians of ``h``, ``g``.

    Steps near a bound are shifted one-sided inside the box so every
    evaluation point stays admissible.
    """
    f0, h0, g0 = fun(z)
    n = z.size
    grad = np.zeros(n)
    Jh = np.zeros((h0.size, n))
    Jg = np.zeros((g0.size, n))
    for i in range(n):
        step = rel_step * max(1.0, abs(z[i]))
        zp = z.copy()
        zm = z.copy()
        zp[i] += step
        zm[i] -= step
        if ub is not None and zp[i] > ub[i]:
            zp[i], zm[i] = z[i], z[i] - step
            step_den = step
        elif lb is not None and zm[i] < lb[i]:
            zp[i], zm[i] = z[i] + step, z[i]
            step_den = step
        else:
            step_den = 2.0 * step
        fp, hp, gp = fun(zp) if zp[i] != z[i] else (f0, h0, g0)
        fm, hm, gm = fun(zm) if zm[i] != z[i] else (f0, h0, g0)
        grad[i] = (fp - fm) / step_den
        Jh[:, i] = (hp - hm) / step_den
        Jg[:, i] = (gp - gm) / step_den
    return (f0, h0, g0), grad, Jh, Jg


def _qp_step(H, grad, h, Jh, g, Jg, z, lb, ub, cfg):
    n = z.size
    # equality block: particular least-squares step plus null-space parameterisation
    if h.size:
        U, sv, Vt = np.linalg.svd(Jh, full_matrices=True)
        smax = sv[0] if sv.size else 0.0
        rank = int(np.sum(sv > cfg.rank_tol * max(smax, 1.0)))
        V = Vt.T
        Vr = V[:, :rank]
        Z = V[:, rank:]
        d_p = -Vr @ ((U[:, :rank].T @ h) / sv[:rank]) if rank else np.zeros(n)
    else:
        rank = 0
        Z = np.eye(n)
        d_p = np.zeros(n)
    nz = Z.shape[1]

    box_rows = []
    box_rhs = []
    fin_u = np.isfinite(ub)
    fin_l = np.isfinite(lb)
    I = np.eye(n)
    if np.any(fin_u):
        box_rows.append(I[fin_u])
        box_rhs.append((ub - z)[fin_u])
    if np.any(fin_l):
        box_rows.append(-I[fin_l])
        box_rhs.append((z - lb)[fin_l])
    C = np.vstack([Jg] + box_rows) if box_rows else Jg
    r = np.concatenate([-g] + box_rhs) if box_rows else -g
    n_g = g.size

    if nz == 0:
        d = d_p
        lam_all = np.zeros(C.shape[0])
        elastic = np.zeros(C.shape[0])
    else:
        Qw = Z.T @ H @ Z
        Qw = 0.5 * (Qw + Qw.T)
        cw = Z.T @ (grad + H @ d_p)
        Cw = C @ Z
        rw = r - C @ d_p
        m = Cw.shape[0]
        try:
            sol = solve_inequality_qp(Qw, cw, Cw, rw, max_iter=60)
            w = sol.x
            elastic = np.zeros(m)
            lam_all = sol.multipliers
        except SolverBreakdown:
            # linearisation inconsistent: an elastic slack per row keeps the subproblem feasible
            Qe = np.zeros((nz + m, nz + m))
            Qe[:nz, :nz] = Qw
            ce = np.concatenate([cw, np.full(m, cfg.elastic_weight)])
            Ae = np.block([[Cw, -np.eye(m)], [np.zeros((m, nz)), -np.eye(m)]])
            be = np.concatenate([rw, np.zeros(m)])
            sol = solve_inequality_qp(Qe, ce, Ae, be)
            w = sol.x[:nz]
            elastic = sol.x[nz:]
            lam_all = sol.multipliers[:m]
        d = d_p + Z @ w
    lam_g = lam_all[:n_g]
    lam_box = lam_all[n_g:]
    # equality multipliers by least squares on the stationarity condition
    resid = grad + H @ d + C.T @ lam_all
    lam_h = -np.linalg.lstsq(Jh.T, resid, rcond=cfg.rank_tol)[0] if h.size else np.zeros(0)
    return d, lam_h, lam_g, lam_box, C, elastic, rank


def _second_order_correction(H, grad, z, d, h_t, g_t, Jh, Jg, lb, ub, cfg):
    """Re-solve the subproblem with constraint values taken at the trial point ``z + d``."""
    try:
        p = _qp_step(H, grad, h_t - Jh @ d, Jh, g_t - Jg @ d, Jg, z, lb, ub, cfg)[0]
    except (SolverBreakdown, np.linalg.LinAlgError):
        return None
    if not np.all(np.isfinite(p)):
        return None
    return np.clip(z + p, lb, ub)


def solve(fun, x0, lb=None, ub=None, config: SolverConfig | None = None,
          callback=None, objective_scale: float | None = None) -> SqpResult:
    """Minimise ``f`` subject to ``h = 0``, ``g <= 0`` and ``lb <= x <= ub``.

    ``fun(x)`` returns ``(f, h, g)``. The returned point is the best iterate
    (lowest objective) among those within the feasibility tolerance; the
    initial point counts when it is feasible.
    """
    cfg = config or SolverConfig()
    t_start = time.perf_counter()
    counted = _Counter(fun)
    z = np.asarray(x0, dtype=float).copy()
    n = z.size
    lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    z = np.clip(z, lb, ub)

    f_raw, h, g = counted(z)
    if not np.isfinite(f_raw):
        raise SolverBreakdown("objective is not finite at the initial point", z.copy())
    fscale = objective_scale if objective_scale else 1.0 / max(abs(f_raw), 1.0)

    def scaled(zz):
        f, hh, gg = counted(zz)
        return f * fscale, hh, gg

    def merit(f_s, hh, gg, mu):
        return f_s + mu * _violation_l1(hh, gg)

    viol0 = _violation_inf(h, g)
    result = SqpResult(x=z.copy(), objective=f_raw, violation=viol0, status="max_iterations",
                       success=False, iterations=0, x_initial=z.copy(),
                       objective_initial=f_raw, violation_initial=viol0)
    best = (f_raw, z.copy(), viol0) if viol0 <= cfg.feasibility_tol else None

    H = np.eye(n)
    mu = cfg.penalty_init
    (f_s, h, g), grad, Jh, Jg = fd_jacobians(scaled, z, cfg.fd_step, lb, ub)
    status = "max_iterations"
    stalled = 0
    for it in range(1, cfg.max_iterations + 1):
        try:
            d, lam_h, lam_g, lam_box, C, elastic, rank = _qp_step(H, grad, h, Jh, g, Jg, z, lb, ub, cfg)
        except (SolverBreakdown, np.linalg.LinAlgError) as exc:
            raise SolverBreakdown(f"iteration {it}: {exc}", z.copy()) from exc
        if not np.all(np.isfinite(d)):
            raise SolverBreakdown(f"iteration {it}: non-finite search direction", z.copy())

        kkt_vec = grad + (Jh.T @ lam_h if lam_h.size else 0.0) + C.T @ np.concatenate([lam_g, lam_box])
        kkt = float(np.max(np.abs(kkt_vec))) if n else 0.0
        viol = _violation_inf(h, g)
        step_norm = float(np.max(np.abs(d))) if n else 0.0
        if viol <= cfg.feasibility_tol and (kkt <= cfg.optimality_tol or
                                             step_norm <= cfg.step_tol * (1.0 + np.max(np.abs(z)))):
            status = "converged" if kkt <= cfg.optimality_tol else "converged_step"
            break

        lam_max = max([np.max(np.abs(a)) for a in (lam_h, lam_g) if a.size] or [0.0])
        mu = max(mu, cfg.penalty_margin * lam_max + 1e-8)
        phi0 = merit(f_s, h, g, mu)
        lin_viol = _violation_l1(h + Jh @ d, g + Jg @ d)
        D = grad @ d - mu * (_violation_l1(h, g) - lin_viol)
        if D >= 0.0:
            D = -1e-12 * max(1.0, abs(phi0))
        alpha = 1.0
        accepted = False
        for trial in range(cfg.max_backtracks):
            zt = np.clip(z + alpha * d, lb, ub)
            ft, ht, gt = scaled(zt)
            if np.isfinite(ft):
                phit = merit(ft, ht, gt, mu)
                if phit <= phi0 + cfg.armijo * alpha * D:
                    accepted = True
                    break
                if trial == 0:
                    # second-order correction against curvature of the active constraints
                    zc = _second_order_correction(H, grad, z, d, ht, gt, Jh, Jg, lb, ub, cfg)
                    if zc is not None:
                        fc, hc, gc = scaled(zc)
                        if np.isfinite(fc):
                            phic = merit(fc, hc, gc, mu)
                            if phic <= phi0 + cfg.armijo * D:
                                zt, ft, ht, gt, phit = zc, fc, hc, gc, phic
                                accepted = True
                                break
            alpha *= cfg.backtrack
        if not accepted:
            if not np.allclose(H, np.eye(n)):
                log.debug("iteration %d: line search failed, resetting Hessian", it)
                H = np.eye(n)
                continue
            status = "line_search_failed"
            break

        if abs(phi0 - phit) <= 1e-14 * (1.0 + abs(phi0)):
            stalled += 1
            if stalled >= cfg.stall_iterations:
                status = "stalled"
                break
        else:
            stalled = 0
        z_new = zt
        (f_s_new, h_new, g_new), grad_new, Jh_new, Jg_new = fd_jacobians(scaled, z_new, cfg.fd_step, lb, ub)
        lam_ineq = np.concatenate([lam_g, lam_box])
        grad_L_old = grad + (Jh.T @ lam_h if lam_h.size else 0.0) + C.T @ lam_ineq
        C_new = np.vstack([Jg_new, C[Jg.shape[0]:]])
        grad_L_new = grad_new + (Jh_new.T @ lam_h if lam_h.size else 0.0) + C_new.T @ lam_ineq
        s = z_new - z
        y = grad_L_new - grad_L_old
        sHs = float(s @ H @ s)
        if sHs > 1e-300:
            sy = float(s @ y)
            theta = 1.0 if sy >= 0.2 * sHs else 0.8 * sHs / (sHs - sy)
            r = theta * y + (1.0 - theta) * (H @ s)
            Hs = H @ s
            H = H - np.outer(Hs, Hs) / sHs + np.outer(r, r) / float(s @ r)
            H = 0.5 * (H + H.T)

        z, f_s, h, g, grad, Jh, Jg = z_new, f_s_new, h_new, g_new, grad_new, Jh_new, Jg_new
        f_raw = f_s / fscale
        viol = _violation_inf(h, g)
        rec = IterationRecord(it, f_raw, viol, phi0, phit, mu, alpha, step_norm * alpha, kkt)
        result.history.append(rec)
        if viol <= cfg.feasibility_tol and (best is None or f_raw <= best[0]):
            best = (f_raw, z.copy(), viol)
        if callback is not None:
            callback(rec, z)
        log.debug("it %d f=%.6e viol=%.2e alpha=%.3g kkt=%.2e", it, f_raw, viol, alpha, kkt)

    if best is not None:
        result.objective, result.x, result.violation = best[0], best[1], best[2]
    else:
        result.objective, result.x, result.violation = f_raw, z.copy(), _violation_inf(h, g)
    result.status = status
    result.success = status in ("converged", "converged_step", "stalled") and result.violation <= cfg.feasibility_tol
    result.iterations = len(result.history)
    result.evaluations = counted.count
    result.wall_time = time.perf_counter() - t_start
    return result
