"""Small dense QP/LP solvers and the command-QP / wrench-LP builders.

The QP solver is a primal active-set method for strictly convex problems

    min 0.5 z'Hz + h'z   s.t.  A z <= b

with an optional warm-start active set. LPs go through HiGHS' dual simplex
(``scipy.optimize.linprog``), which returns basic solutions and duals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import linprog

from .errors import ConfigError, DegenerateBoxError, SolverError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
FAULT = "fault"

FORCE_DIRECTIONS = np.vstack([np.eye(3), -np.eye(3)])


@dataclass
class QpProblem:
    H: np.ndarray
    h: np.ndarray
    A: np.ndarray
    b: np.ndarray
    # optional feasible starting point supplied by the builder
    z_start: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.asarray(self.H, float)
        self.h = np.asarray(self.h, float).ravel()
        d = self.h.size
        self.A = np.asarray(self.A, float).reshape(-1, d)
        self.b = np.asarray(self.b, float).ravel()
        if self.H.shape != (d, d) or self.b.size != self.A.shape[0]:
            raise ConfigError("QP dimensions are inconsistent")
        if not np.allclose(self.H, self.H.T, atol=1e-12):
            raise ConfigError("QP Hessian must be symmetric")

    @property
    def d(self):
        return self.h.size

    @property
    def m(self):
        return self.b.size

    def objective(self, z):
        return float(0.5 * z @ self.H @ z + self.h @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    duals: np.ndarray
    kkt_residual: float
    status: str
    active: tuple = ()
    iterations: int = 0
    residuals: dict = field(default_factory=dict)
    certificate: np.ndarray | None = None


@dataclass(frozen=True)
class CommandQpConfig:
    rho: float = 1000.0
    eps_s: float = 1e-6

    def __post_init__(self):
        if not (self.rho > 0 and self.eps_s > 0):
            raise ConfigError("command QP needs rho > 0 and eps_s > 0")


class LpSolution(NamedTuple):
    x: np.ndarray | None
    value: float
    status: str
    duals: np.ndarray | None = None


# ---------------------------------------------------------------------------
# LP

def solve_lp(c, A, b, bounds=None) -> LpSolution:
    """Maximise c'x subject to A x <= b (x free unless ``bounds`` given)."""
    c = np.asarray(c, float)
    A = np.asarray(A, float).reshape(-1, c.size)
    b = np.asarray(b, float)
    if bounds is None:
        bounds = [(None, None)] * c.size
    res = linprog(-c, A_ub=A if A.size else None, b_ub=b if A.size else None,
                  bounds=bounds, method="highs-ds")
    if res.status == 0:
        duals = -res.ineqlin.marginals if A.size else np.zeros(0)
        return LpSolution(res.x, float(c @ res.x), OPTIMAL, duals)
    if res.status == 2:
        return LpSolution(None, -math.inf, INFEASIBLE)
    if res.status == 3:
        return LpSolution(None, math.inf, UNBOUNDED)
    raise SolverError(f"LP solver failed: {res.message}", status=res.status)


def feasible_point(A, b):
    """A point with A z <= b, or (None, farkas_y) with y >= 0, A'y = 0, b'y < 0."""
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    m, d = A.shape
    # min t  s.t.  A z - t <= b,  t >= 0
    c = np.zeros(d + 1)
    c[-1] = -1.0
    Aug = np.hstack([A, -np.ones((m, 1))])
    sol = solve_lp(c, Aug, b, bounds=[(None, None)] * d + [(0, None)])
    if sol.status != OPTIMAL:
        raise SolverError("phase-1 LP did not terminate", status=sol.status)
    t = sol.x[-1]
    if t <= 1e-10 * (1.0 + np.abs(b).max(initial=0.0)):
        return sol.x[:d], None
    y = np.maximum(sol.duals, 0.0)
    return None, y


# ---------------------------------------------------------------------------
# QP

def _independent(A_rows, tol=1e-10):
    """Greedy subset of row indices with linearly independent rows."""
    keep = []
    basis = np.zeros((0, A_rows.shape[1] if A_rows.ndim == 2 else 0))
    for i, row in enumerate(A_rows):
        if basis.shape[0]:
            resid = row - basis.T @ (basis @ row)
        else:
            resid = row.copy()
        nr = np.linalg.norm(resid)
        if nr > tol * max(1.0, np.linalg.norm(row)):
            basis = np.vstack([basis, resid / nr])
            keep.append(i)
    return keep


def _eqp(H, g, Aw):
    """Solve min 0.5 p'Hp + g'p s.t. Aw p = 0 by the null-space method; returns (p, lambda).

    Aw must have independent rows. With a full working set the null space is
    empty and the step is exactly zero.
    """
    d = H.shape[0]
    k = Aw.shape[0]
    if k == 0:
        return np.linalg.solve(H, -g), np.zeros(0)
    Q, R = np.linalg.qr(Aw.T, mode="complete")
    Z = Q[:, k:]
    if Z.shape[1]:
        step = Z @ np.linalg.solve(Z.T @ H @ Z, -(Z.T @ g))
    else:
        step = np.zeros(d)
    lam = np.linalg.solve(R[:k, :k], -(Q[:, :k].T @ (g + H @ step)))
    return step, lam


def kkt_residuals(p: QpProblem, z, lam) -> dict:
    slack = p.A @ z - p.b if p.m else np.zeros(0)
    stat = p.H @ z + p.h + (p.A.T @ lam if p.m else 0.0)
    return {
        "stationarity": float(np.abs(stat).max(initial=0.0)),
        "primal": float(np.maximum(slack, 0.0).max(initial=0.0)),
        "complementarity": float(abs(lam @ slack)) if p.m else 0.0,
        "dual": float(np.maximum(-lam, 0.0).max(initial=0.0)),
    }


def _scale(p: QpProblem):
    return 1.0 + max(np.abs(p.h).max(initial=0.0), np.abs(p.b).max(initial=0.0))


def solve_qp(p: QpProblem, tol: float = 1e-8, warm_active=None, max_iter=None) -> QpSolution:
    """Primal active-set solve of a strictly convex QP.

    Residuals are checked against ``tol`` scaled by ``1 + max(|h|, |b|)``.
    ``warm_active`` is an iterable of constraint indices from a previous solve.
    """
    H, h, A, b = p.H, p.h, p.A, p.b
    d, m = p.d, p.m
    if np.linalg.eigvalsh(H)[0] <= 0:
        raise ConfigError("QP Hessian must be positive definite")
    feas_tol = 1e-12 * _scale(p)

    z, W = None, []
    if warm_active:
        W = [i for i in sorted(set(int(i) for i in warm_active)) if 0 <= i < m]
        W = [W[k] for k in _independent(A[W])] if W else []
        if W:
            # point on the warm working set; accept only if primal feasible
            Aw = A[W]
            K = np.block([[H, Aw.T], [Aw, np.zeros((len(W), len(W)))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-h, b[W]]))
                zw = sol[:d]
                if np.all(A @ zw - b <= 1e3 * feas_tol):
                    z = zw
            except np.linalg.LinAlgError:
                pass
        if z is None:
            W = []
    if z is None:
        if p.z_start is not None and np.all(A @ p.z_start - b <= 1e3 * feas_tol):
            z = np.array(p.z_start, float)
        elif m == 0:
            z = np.zeros(d)
        else:
            z, y = feasible_point(A, b)
            if z is None:
                return QpSolution(np.full(d, np.nan), np.zeros(m), math.inf, INFEASIBLE, certificate=y)
        if m:
            tight = np.flatnonzero(np.abs(A @ z - b) <= 1e3 * feas_tol).tolist()
            W = [tight[k] for k in _independent(A[tight])] if tight else []

    max_iter = max_iter or 50 * (d + m + 1)
    lam_w = np.zeros(0)
    for it in range(1, max_iter + 1):
        g = H @ z + h
        step, lam_w = _eqp(H, g, A[W] if W else np.zeros((0, d)))
        if np.abs(step).max(initial=0.0) <= 1e-12 * (1.0 + np.abs(z).max(initial=0.0)):
            if lam_w.size == 0 or lam_w.min() >= -1e-12 * _scale(p):
                break
            W.pop(int(np.argmin(lam_w)))
            continue
        Ap = A @ step if m else np.zeros(0)
        alpha, block = 1.0, -1
        if m:
            inW = np.zeros(m, bool)
            inW[W] = True
            cand = np.flatnonzero((~inW) & (Ap > 1e-14))
            if cand.size:
                ratios = (b[cand] - A[cand] @ z) / Ap[cand]
                ratios = np.maximum(ratios, 0.0)
                k = int(np.argmin(ratios))
                if ratios[k] < 1.0:
                    alpha, block = float(ratios[k]), int(cand[k])
        z = z + alpha * step
        if block >= 0:
            W.append(block)
    else:
        lam = np.zeros(m)
        if W:
            lam[W] = _eqp(H, H @ z + h, A[W])[1]
        res = kkt_residuals(p, z, lam)
        raise SolverError("QP iteration cap reached", iterations=max_iter, **res)

    lam = np.zeros(m)
    if W:
        lam[W] = np.maximum(lam_w, 0.0)
    res = kkt_residuals(p, z, lam)
    worst = max(res.values())
    status = OPTIMAL if worst <= tol * _scale(p) else FAULT
    return QpSolution(z, lam, worst, status, tuple(sorted(W)), it, res)


# ---------------------------------------------------------------------------
# command QP

def build_command_qp(qdd_nom, lower, upper, M_hat, tau_base, tau_min, tau_max,
                     cfg: CommandQpConfig = CommandQpConfig()) -> QpProblem:
    """QP over z = (qdd, s): hard acceleration box, slack-softened torque limits.

    Rows are emitted in a fixed order (upper box, lower box, torque upper,
    torque lower, slack sign) and rows with infinite bounds are dropped, so
    the layout is constant for fixed limits and warm starts stay meaningful.
    """
    qdd_nom = np.asarray(qdd_nom, float)
    n = qdd_nom.size
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    M_hat = np.asarray(M_hat, float)
    tau_base = np.asarray(tau_base, float)
    tau_min = np.broadcast_to(np.asarray(tau_min, float), (n,))
    tau_max = np.broadcast_to(np.asarray(tau_max, float), (n,))
    if lower.shape != (n,) or upper.shape != (n,) or M_hat.shape != (n, n) or tau_base.shape != (n,):
        raise ConfigError("command QP dimension mismatch")
    bad = np.flatnonzero(lower > upper)
    if bad.size:
        raise DegenerateBoxError(bad, lower, upper)

    I = np.eye(n)
    Z = np.zeros((n, n))
    rows, rhs = [], []

    def add(block, vec):
        keep = np.isfinite(vec)
        rows.append(block[keep])
        rhs.append(vec[keep])

    add(np.hstack([I, Z]), upper)
    add(np.hstack([-I, Z]), -lower)
    add(np.hstack([M_hat, -I]), tau_max + tau_base)
    add(np.hstack([-M_hat, -I]), -tau_min - tau_base)
    add(np.hstack([Z, -I]), np.zeros(n))
    A = np.vstack(rows)
    b = np.concatenate(rhs)

    H = np.diag(np.concatenate([np.ones(n), np.full(n, cfg.eps_s)]))
    h = np.concatenate([-qdd_nom, np.full(n, cfg.rho)])

    # trivially feasible start: clipped nominal, slack covering the torque excess
    q0 = np.clip(qdd_nom, lower, upper)
    u0 = M_hat @ q0 - tau_base
    s0 = np.maximum(0.0, np.maximum(u0 - tau_max, tau_min - u0))
    s0 = np.where(np.isfinite(s0), s0, 0.0)
    return QpProblem(H, h, A, b, z_start=np.concatenate([q0, s0]))


def hard_torque_feasible(lower, upper, M_hat, tau_base, tau_min, tau_max) -> bool:
    """Whether some qdd in the box meets the torque limits without slack."""
    n = len(lower)
    tau_min = np.broadcast_to(np.asarray(tau_min, float), (n,))
    tau_max = np.broadcast_to(np.asarray(tau_max, float), (n,))
    A = np.vstack([M_hat, -M_hat])
    b = np.concatenate([tau_max + tau_base, -tau_min - tau_base])
    keep = np.isfinite(b)
    bounds = [(lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None)
              for lo, hi in zip(lower, upper)]
    sol = solve_lp(np.zeros(n), A[keep], b[keep], bounds=bounds)
    return sol.status == OPTIMAL


def exact_penalty_check(sol: QpSolution, hard_feasible: bool, n: int, tol: float = 1e-6) -> bool:
    """True iff hard feasibility implies a (numerically) zero slack."""
    if not hard_feasible:
        return True
    return float(np.max(sol.z[n:], initial=0.0)) <= tol


# ---------------------------------------------------------------------------
# wrench feasibility

def wrench_capacity(direction, lower, upper, M_hat, J, tau_base_0, tau_min, tau_max) -> float:
    """Largest F >= 0 along a task-space force direction admitting an in-box qdd."""
    n = len(lower)
    wrench = np.zeros(6)
    wrench[:3] = direction
    jd = np.asarray(J, float).T @ wrench
    tau_min = np.broadcast_to(np.asarray(tau_min, float), (n,))
    tau_max = np.broadcast_to(np.asarray(tau_max, float), (n,))
    A = np.vstack([np.hstack([M_hat, -jd[:, None]]), np.hstack([-M_hat, jd[:, None]])])
    b = np.concatenate([tau_max + tau_base_0, -tau_min - tau_base_0])
    keep = np.isfinite(b)
    bounds = [(lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None)
              for lo, hi in zip(lower, upper)] + [(0.0, None)]
    c = np.zeros(n + 1)
    c[-1] = 1.0
    sol = solve_lp(c, A[keep], b[keep], bounds=bounds)
    if sol.status == UNBOUNDED:
        return math.inf
    if sol.status == INFEASIBLE:
        return 0.0
    return max(sol.value, 0.0)


def wrench_feasibility(lower, upper, M_hat, J, tau_base_0, tau_min, tau_max,
                       directions=FORCE_DIRECTIONS) -> float:
    """Minimum over force directions of the admissible wrench magnitude."""
    return min(wrench_capacity(d, lower, upper, M_hat, J, tau_base_0, tau_min, tau_max)
               for d in directions)


def qp_lipschitz_probe(builder, x0, radius, samples=100, rng=None) -> float:
    """Largest observed ||f(x) - f(y)|| / ||x - y|| over random pairs in a ball.

    ``builder`` maps a state vector to the commanded acceleration.
    """
    rng = np.random.default_rng(rng)
    x0 = np.asarray(x0, float)
    worst = 0.0
    for _ in range(samples):
        pts = []
        for _ in range(2):
            v = rng.standard_normal(x0.size)
            v *= radius * rng.random() ** (1.0 / x0.size) / np.linalg.norm(v)
            pts.append(x0 + v)
        dx = np.linalg.norm(pts[0] - pts[1])
        if dx == 0:
            continue
        df = np.linalg.norm(np.asarray(builder(pts[0])) - np.asarray(builder(pts[1])))
        worst = max(worst, df / dx)
    return worst
