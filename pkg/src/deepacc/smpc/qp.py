"""Dense convex QP solver.

Problems have the form::

    minimize    0.5 x'Px + q'x + const
    subject to  l <= A x <= u,   lb <= x <= ub

Equality rows use ``l == u``. The solver runs an ADMM operator-splitting
iteration (the OSQP scheme: one linear solve with a cached Cholesky factor,
a box projection and a dual update per step) until the active set settles,
then polishes by solving the equality-constrained KKT system on the guessed
active set, correcting the guess with primal-dual active-set sweeps.

Dual sign convention: ``Px + q + A'y = 0`` with ``y_i >= 0`` on rows at
their upper bound and ``y_i <= 0`` at their lower bound.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import DomainError

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max-iterations"
INFEASIBLE = "infeasible"


@dataclass
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    names: list[str]
    const: float = 0.0
    row_names: Optional[list[str]] = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.l = np.asarray(self.l, dtype=float).ravel()
        self.u = np.asarray(self.u, dtype=float).ravel()
        self.lb = np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.asarray(self.ub, dtype=float).ravel()
        self.names = list(self.names)
        m = self.A.shape[0]
        if self.row_names is None:
            self.row_names = [f"row{i}" for i in range(m)]

        if self.P.shape != (n, n):
            raise DomainError(f"P has shape {self.P.shape}, expected {(n, n)}")
        if not np.allclose(self.P, self.P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.P).max())):
            raise DomainError("cost matrix must be symmetric")
        if self.l.size != m or self.u.size != m or len(self.row_names) != m:
            raise DomainError("constraint bounds do not match the number of rows")
        if self.lb.size != n or self.ub.size != n:
            raise DomainError("variable bounds do not match the decision dimension")
        if np.any(self.l > self.u) or np.any(self.lb > self.ub):
            raise DomainError("every lower bound must not exceed its upper bound")
        if len(self.names) != n or len(set(self.names)) != n:
            raise DomainError("variable names must be unique and cover every coordinate")
        for arr in (self.P, self.q, self.A):
            if not np.all(np.isfinite(arr)):
                raise DomainError("problem data must be finite")

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x + self.const)

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Constraint rows with finite variable bounds appended as identity rows.

        Returns ``(A, l, u, bound_index)`` where ``bound_index[k]`` is the
        variable of appended row ``k``.
        """
        finite = np.where(np.isfinite(self.lb) | np.isfinite(self.ub))[0]
        eye = np.eye(self.n)[finite]
        A = np.vstack([self.A, eye])
        l = np.concatenate([self.l, self.lb[finite]])
        u = np.concatenate([self.u, self.ub[finite]])
        return A, l, u, finite


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray  # duals of the stacked rows (constraints then bounds)
    objective: float
    residuals: dict
    status: str
    iterations: int
    names: list[str] = field(default_factory=list)

    @property
    def values(self) -> dict:
        return {n: float(v) for n, v in zip(self.names, self.x)}

    def __getitem__(self, name: str) -> float:
        return float(self.x[self.names.index(name)])


def kkt_residuals(P, q, A, l, u, x, y) -> dict:
    """Absolute infinity-norm stationarity, primal and complementarity residuals."""
    Ax = A @ x
    stat = float(np.max(np.abs(P @ x + q + A.T @ y), initial=0.0))
    prim = float(np.max(np.maximum(np.maximum(l - Ax, Ax - u), 0.0), initial=0.0))
    y_up = np.maximum(y, 0.0)
    y_lo = np.maximum(-y, 0.0)
    with np.errstate(invalid="ignore"):
        gap_up = np.where(np.isfinite(u), y_up * np.abs(u - Ax), y_up)
        gap_lo = np.where(np.isfinite(l), y_lo * np.abs(Ax - l), y_lo)
    comp = float(np.max(np.maximum(gap_up, gap_lo), initial=0.0))
    return {"stationarity": stat, "primal": prim, "complementarity": comp}


def _kkt_ok(res: dict, tol: float) -> bool:
    return all(v <= tol for v in res.values())


def _solve_kkt(P, q, A_act, b_act):
    n, k = P.shape[0], A_act.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = P
    K[:n, n:] = A_act.T
    K[n:, :n] = A_act
    rhs = np.concatenate([-q, b_act])
    try:
        sol = np.linalg.solve(K, rhs)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    # one step of iterative refinement
    sol = sol + np.linalg.lstsq(K, rhs - K @ sol, rcond=None)[0]
    return sol[:n], sol[n:]


def _polish(P, q, A, l, u, z, y, tol, max_sweeps=60):
    """Exact KKT solve on a guessed active set, corrected by primal-dual sweeps."""
    eq = np.isfinite(l) & (l == u)
    lower = (z - l < -y) & ~eq
    upper = (u - z < y) & ~eq & ~lower
    seen = set()
    for _ in range(max_sweeps):
        key = (lower.tobytes(), upper.tobytes())
        if key in seen:
            return None
        seen.add(key)
        act = eq | lower | upper
        idx = np.where(act)[0]
        target = np.where(upper, u, l)[idx]
        x, y_act = _solve_kkt(P, q, A[idx], target)
        y_full = np.zeros(A.shape[0])
        y_full[idx] = y_act
        Ax = A @ x
        viol_lo = ~act & (Ax < l - 0.1 * tol)
        viol_up = ~act & (Ax > u + 0.1 * tol)
        bad_lo = lower & (y_full > 0.0)
        bad_up = upper & (y_full < 0.0)
        if not (viol_lo.any() or viol_up.any() or bad_lo.any() or bad_up.any()):
            y_full[lower] = np.minimum(y_full[lower], 0.0)
            y_full[upper] = np.maximum(y_full[upper], 0.0)
            return x, y_full
        lower = (lower & ~bad_lo) | viol_lo
        upper = ((upper & ~bad_up) | viol_up) & ~lower
    return None


def solve_qp(qp: QpProblem, tol: float = 1e-8, max_iter: int = 20000,
             rho: float = 0.1, sigma: float = 1e-6, alpha: float = 1.6) -> QpSolution:
    """Solve a convex QP; ``status == "optimal"`` guarantees KKT residuals <= ``tol``."""
    P, q = qp.P, qp.q
    A, l, u, _ = qp.stacked()
    n, m = qp.n, A.shape[0]

    def finish(x, y, status, it):
        res = kkt_residuals(P, q, A, l, u, x, y)
        return QpSolution(x, y, qp.objective(x), res, status, it, list(qp.names))

    if m == 0:
        x, _ = _solve_kkt(P, q, np.zeros((0, n)), np.zeros(0))
        res = kkt_residuals(P, q, A, l, u, x, np.zeros(0))
        return finish(x, np.zeros(0), OPTIMAL if _kkt_ok(res, tol) else MAX_ITER, 0)

    eq = np.isfinite(l) & (l == u)
    rho_vec = np.where(eq, 1e3 * rho, rho)
    x = np.zeros(n)
    z = np.clip(np.zeros(m), l, u)
    y = np.zeros(m)

    def factor(rv):
        K = P + sigma * np.eye(n) + A.T @ (rv[:, None] * A)
        return np.linalg.cholesky(K)

    L = factor(rho_vec)
    eps_admm = 1e-4
    check_every = 10
    best = None
    scale_q = max(1.0, float(np.abs(q).max(initial=0.0)))

    for it in range(1, max_iter + 1):
        rhs = sigma * x - q + A.T @ (rho_vec * z - y)
        x_t = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        z_t = A @ x_t
        x_new = alpha * x_t + (1.0 - alpha) * x
        z_relax = alpha * z_t + (1.0 - alpha) * z
        z_new = np.clip(z_relax + y / rho_vec, l, u)
        y_new = y + rho_vec * (z_relax - z_new)
        dy = y_new - y
        x, z, y = x_new, z_new, y_new

        if it % check_every:
            continue
        Ax = A @ x
        r_prim = float(np.max(np.abs(Ax - z)))
        Px = P @ x
        Aty = A.T @ y
        r_dual = float(np.max(np.abs(Px + q + Aty)))
        prim_scale = max(np.max(np.abs(Ax)), np.max(np.abs(z)), 1.0)
        dual_scale = max(np.max(np.abs(Px)), np.max(np.abs(Aty)), scale_q)

        if _primal_infeasible(A, l, u, dy):
            log.error("QP certified primal infeasible after %d iterations", it)
            return finish(x, y, INFEASIBLE, it)

        if r_prim <= eps_admm * prim_scale and r_dual <= eps_admm * dual_scale:
            pol = _polish(P, q, A, l, u, z, y, tol)
            if pol is not None:
                xp, yp = pol
                res = kkt_residuals(P, q, A, l, u, xp, yp)
                if _kkt_ok(res, tol):
                    return finish(xp, yp, OPTIMAL, it)
                if best is None or max(res.values()) < max(best[2].values()):
                    best = (xp, yp, res)
            eps_admm = max(eps_admm * 0.1, 1e-12)

        if it % (5 * check_every) == 0 and r_dual > 0 and r_prim > 0:
            ratio = math.sqrt((r_prim / prim_scale) / (r_dual / dual_scale))
            if ratio > 5.0 or ratio < 0.2:
                rho_vec = np.clip(rho_vec * ratio, 1e-6, 1e6)
                L = factor(rho_vec)

    pol = _polish(P, q, A, l, u, z, y, tol)
    if pol is not None:
        res = kkt_residuals(P, q, A, l, u, *pol)
        if _kkt_ok(res, tol):
            return finish(pol[0], pol[1], OPTIMAL, max_iter)
    if best is not None:
        return finish(best[0], best[1], MAX_ITER, max_iter)
    return finish(x, y, MAX_ITER, max_iter)


def _primal_infeasible(A, l, u, dy, eps=1e-9) -> bool:
    norm = float(np.max(np.abs(dy), initial=0.0))
    if norm < 1e-6:
        return False
    dpos, dneg = np.maximum(dy, 0.0), np.minimum(dy, 0.0)
    if np.any((dpos > eps * norm) & ~np.isfinite(u)) or np.any((dneg < -eps * norm) & ~np.isfinite(l)):
        return False
    if float(np.max(np.abs(A.T @ dy))) > eps * norm:
        return False
    uf = np.where(np.isfinite(u), u, 0.0)
    lf = np.where(np.isfinite(l), l, 0.0)
    return float(uf @ dpos + lf @ dneg) < -eps * norm


def dump_qp(qp: QpProblem, path, solution: Optional[QpSolution] = None) -> None:
    """Write the problem (and optionally a solution) in a line-oriented coordinate format."""
    fmt = repr
    lines = [f"# deepacc qp dump", f"n {qp.n}", f"m {qp.m}", f"const {fmt(float(qp.const))}"]
    lines += [f"var {i} {name}" for i, name in enumerate(qp.names)]
    lines += [f"row {i} {name}" for i, name in enumerate(qp.row_names)]
    for i, j in zip(*np.nonzero(np.triu(qp.P))):
        lines.append(f"P {i} {j} {fmt(float(qp.P[i, j]))}")
    lines += [f"q {i} {fmt(float(v))}" for i, v in enumerate(qp.q) if v != 0.0]
    for i, j in zip(*np.nonzero(qp.A)):
        lines.append(f"A {i} {j} {fmt(float(qp.A[i, j]))}")
    lines += [f"l {i} {fmt(float(v))}" for i, v in enumerate(qp.l)]
    lines += [f"u {i} {fmt(float(v))}" for i, v in enumerate(qp.u)]
    lines += [f"lb {i} {fmt(float(v))}" for i, v in enumerate(qp.lb)]
    lines += [f"ub {i} {fmt(float(v))}" for i, v in enumerate(qp.ub)]
    if solution is not None:
        lines.append(f"status {solution.status}")
        lines.append(f"objective {fmt(float(solution.objective))}")
        lines += [f"x {i} {fmt(float(v))}" for i, v in enumerate(solution.x)]
        lines += [f"residual {k} {fmt(float(v))}" for k, v in solution.residuals.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_qp_dump(path) -> QpProblem:
    n = m = 0
    const = 0.0
    names: dict[int, str] = {}
    rows: dict[int, str] = {}
    entries: list[list[str]] = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if not raw or raw.startswith("#"):
            continue
        parts = raw.split()
        tag = parts[0]
        if tag == "n":
            n = int(parts[1])
        elif tag == "m":
            m = int(parts[1])
        elif tag == "const":
            const = float(parts[1])
        elif tag == "var":
            names[int(parts[1])] = parts[2]
        elif tag == "row":
            rows[int(parts[1])] = parts[2]
        else:
            entries.append(parts)
    P = np.zeros((n, n))
    q = np.zeros(n)
    A = np.zeros((m, n))
    vecs = {"l": np.zeros(m), "u": np.zeros(m), "lb": np.zeros(n), "ub": np.zeros(n)}
    for parts in entries:
        tag = parts[0]
        if tag == "P":
            i, j, v = int(parts[1]), int(parts[2]), float(parts[3])
            P[i, j] = P[j, i] = v
        elif tag == "q":
            q[int(parts[1])] = float(parts[2])
        elif tag == "A":
            A[int(parts[1]), int(parts[2])] = float(parts[3])
        elif tag in vecs:
            vecs[tag][int(parts[1])] = float(parts[2])
    return QpProblem(P, q, A, vecs["l"], vecs["u"], vecs["lb"], vecs["ub"],
                     [names[i] for i in range(n)], const, [rows[i] for i in range(m)])


def box_qp(P: np.ndarray, q: np.ndarray, names: Sequence[str] | None = None,
           lb=None, ub=None) -> QpProblem:
    """Convenience constructor for a problem with only variable bounds."""
    n = len(q)
    return QpProblem(
        P, q, np.zeros((0, n)), np.zeros(0), np.zeros(0),
        np.full(n, -np.inf) if lb is None else lb,
        np.full(n, np.inf) if ub is None else ub,
        list(names) if names is not None else [f"x{i}" for i in range(n)],
    )
