"""Chance-constrained MPC transcribed to a QP.

Decision vector (horizon ``N``)::

    a0..a{N-1}, v1..vN, p1..pN, p_rel1..p_relN, delta1..deltaN

Objective: ``sum r1 a_i^2 + r2 (a_i - a_{i-1})^2`` over the inputs (with the
last applied command standing in for ``a_{-1}``) plus
``sum q1 (v_i - v_s)^2 + q2 p_rel_i^2 + rho delta_i`` over the states.
Equalities carry the mean headway / relative-speed recursions and the speed
update; each Gaussian safety chance constraint becomes the linear row
``p_i - T_s v_i + delta_i >= d_s + margin_i``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import DomainError
from ..kinematics import A_MAX, A_MIN, V_MAX, V_MIN
from ..propagation import BeliefState, bootstrap_relative_speed, propagate_variances
from .qp import OPTIMAL, QpProblem, QpSolution, dump_qp, solve_qp
from .special import tightening_margin

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MpcConfig:
    N: int = 3
    dt: float = 1.0
    d_s: float = 15.0
    T_s: float = 0.0
    r1: float = 1.0
    r2: float = 5.0
    q1: float = 5.0
    q2: float = 1.0
    rho: float = 50.0
    eps: tuple[float, ...] = (0.2, 0.4, 0.6)
    v_s: float = 25.0
    v_min: float = V_MIN
    v_max: float = V_MAX
    a_min: float = A_MIN
    a_max: float = A_MAX
    allow_negative_margin: bool = False
    jerk_cap: float = 2.0
    tol: float = 1e-8
    max_iter: int = 20000

    def __post_init__(self):
        object.__setattr__(self, "eps", tuple(float(e) for e in self.eps))
        if int(self.N) != self.N or self.N < 1:
            raise DomainError(f"horizon N must be a positive integer, got {self.N}")
        if len(self.eps) != self.N:
            raise DomainError(f"need {self.N} risk levels, got {len(self.eps)}")
        if any(not (0.0 < e < 1.0) for e in self.eps):
            raise DomainError(f"risk levels must lie in (0, 1), got {self.eps}")
        if any(b < a for a, b in zip(self.eps, self.eps[1:])):
            raise DomainError(f"risk levels must be non-decreasing, got {self.eps}")
        if not (self.dt > 0):
            raise DomainError(f"dt must be positive, got {self.dt}")
        if not (self.r1 > 0 and self.q1 > 0 and self.q2 > 0 and self.rho > 0 and self.r2 >= 0):
            raise DomainError("weights need r1, q1, q2, rho > 0 and r2 >= 0")
        if not (self.v_min < self.v_max and self.a_min < self.a_max):
            raise DomainError("speed and acceleration limits must be ordered")
        if self.d_s < 0 or self.T_s < 0 or self.jerk_cap < 0:
            raise DomainError("d_s, T_s and jerk_cap must be non-negative")
        if not (self.v_min <= self.v_s <= self.v_max):
            raise DomainError(f"set speed {self.v_s} outside [{self.v_min}, {self.v_max}]")

    @property
    def effective_eps(self) -> tuple[float, ...]:
        """Risk levels used in the margins; capped at 0.5 unless negative margins are allowed."""
        if self.allow_negative_margin:
            return self.eps
        return tuple(min(e, 0.5) for e in self.eps)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["eps"] = list(self.eps)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MpcConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise DomainError(f"unknown MPC settings: {sorted(extra)}")
        return cls(**data)


@dataclass
class MpcSolution:
    accelerations: np.ndarray
    speeds: np.ndarray
    p: np.ndarray
    p_rel: np.ndarray
    slacks: np.ndarray
    command: float
    status: str
    margins: np.ndarray
    fallback: bool = False
    qp_solution: Optional[QpSolution] = field(default=None, repr=False)


def variable_names(N: int) -> list[str]:
    return ([f"a{i}" for i in range(N)] + [f"v{i}" for i in range(1, N + 1)]
            + [f"p{i}" for i in range(1, N + 1)] + [f"p_rel{i}" for i in range(1, N + 1)]
            + [f"delta{i}" for i in range(1, N + 1)])


def safety_margins(cfg: MpcConfig, var: Sequence[float], allow_zero_var: bool = False) -> np.ndarray:
    """Tightening offsets for predicted steps 1..N (``var`` indexed 0..N)."""
    var = np.asarray(var, dtype=float)
    if var.size != cfg.N + 1:
        raise DomainError(f"variance list must have N+1 = {cfg.N + 1} entries, got {var.size}")
    return np.array([tightening_margin(float(var[i + 1]), e, allow_zero_var=allow_zero_var)
                     for i, e in enumerate(cfg.effective_eps)])


def build_qp(cfg: MpcConfig, p0: float, p_rel0: float, var: Sequence[float],
             v_now: float, a_prev: float, allow_zero_var: bool = False) -> QpProblem:
    N, dt = cfg.N, cfg.dt
    for name, val in (("p0", p0), ("p_rel0", p_rel0), ("v_now", v_now), ("a_prev", a_prev)):
        if not math.isfinite(val):
            raise DomainError(f"{name} must be finite, got {val}")
    var = np.asarray(var, dtype=float)
    if var.size != N + 1 or not np.all(np.isfinite(var)):
        raise DomainError(f"variance list must hold N+1 = {N + 1} finite entries")
    if np.any(var < 0) or (not allow_zero_var and np.any(var <= 0)):
        raise DomainError("predicted variances must be positive")
    margins = safety_margins(cfg, var, allow_zero_var=allow_zero_var)

    names = variable_names(N)
    n = len(names)
    ia = lambda i: i              # a_i, i = 0..N-1
    iv = lambda i: N + i - 1      # v_i, i = 1..N
    ip = lambda i: 2 * N + i - 1
    ir = lambda i: 3 * N + i - 1
    idl = lambda i: 4 * N + i - 1

    P = np.zeros((n, n))
    q = np.zeros(n)
    const = 0.0
    for i in range(N):
        P[ia(i), ia(i)] += 2.0 * cfg.r1 + 2.0 * cfg.r2
        if i == 0:
            q[ia(0)] -= 2.0 * cfg.r2 * a_prev
            const += cfg.r2 * a_prev * a_prev
        else:
            P[ia(i - 1), ia(i - 1)] += 2.0 * cfg.r2
            P[ia(i), ia(i - 1)] -= 2.0 * cfg.r2
            P[ia(i - 1), ia(i)] -= 2.0 * cfg.r2
    for i in range(1, N + 1):
        P[iv(i), iv(i)] += 2.0 * cfg.q1
        q[iv(i)] -= 2.0 * cfg.q1 * cfg.v_s
        const += cfg.q1 * cfg.v_s * cfg.v_s
        P[ir(i), ir(i)] += 2.0 * cfg.q2
        q[idl(i)] += cfg.rho

    rows, lo, hi, row_names = [], [], [], []

    def add(coeffs: dict, l: float, u: float, label: str):
        r = np.zeros(n)
        for j, c in coeffs.items():
            r[j] += c
        rows.append(r)
        lo.append(l)
        hi.append(u)
        row_names.append(label)

    half = 0.5 * dt * dt
    for i in range(1, N + 1):
        # v_i = v_{i-1} + a_{i-1} dt
        c = {iv(i): 1.0, ia(i - 1): -dt}
        rhs = 0.0
        if i == 1:
            rhs = v_now
        else:
            c[iv(i - 1)] = -1.0
        add(c, rhs, rhs, f"speed{i}")
        # p_i = p_{i-1} + p_rel_{i-1} dt - a_{i-1} dt^2 / 2
        c = {ip(i): 1.0, ia(i - 1): half}
        if i == 1:
            rhs = p0 + p_rel0 * dt
        else:
            c[ip(i - 1)] = -1.0
            c[ir(i - 1)] = -dt
            rhs = 0.0
        add(c, rhs, rhs, f"headway{i}")
        # p_rel_i = p_rel_{i-1} - a_{i-1} dt
        c = {ir(i): 1.0, ia(i - 1): dt}
        if i == 1:
            rhs = p_rel0
        else:
            c[ir(i - 1)] = -1.0
            rhs = 0.0
        add(c, rhs, rhs, f"relspeed{i}")
    for i in range(1, N + 1):
        add({ip(i): 1.0, iv(i): -cfg.T_s, idl(i): 1.0},
            cfg.d_s + float(margins[i - 1]), math.inf, f"safety{i}")

    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    for i in range(N):
        lb[ia(i)], ub[ia(i)] = cfg.a_min, cfg.a_max
    for i in range(1, N + 1):
        lb[iv(i)], ub[iv(i)] = cfg.v_min, cfg.v_max
        lb[idl(i)] = 0.0
    return QpProblem(P, q, np.array(rows), np.array(lo), np.array(hi), lb, ub, names, const, row_names)


def mpc_step(cfg: MpcConfig, belief: BeliefState, v_now: float, a_prev: float,
             prev_command: Optional[float] = None, dump_path=None) -> MpcSolution:
    """Plan ``N`` accelerations from the belief and return the first as the command.

    ``a_prev`` enters the smoothness term. A non-optimal solve falls back to
    ``max(a_min, prev_command - jerk_cap * dt)`` (``prev_command`` defaults to
    ``a_prev``).
    """
    if not isinstance(belief, BeliefState):
        raise DomainError("belief must be a BeliefState")
    if not math.isclose(belief.dt, cfg.dt, rel_tol=1e-12):
        raise DomainError(f"belief spacing {belief.dt} does not match controller dt {cfg.dt}")
    p_rel0, var_rel0 = bootstrap_relative_speed(belief)
    var, _ = propagate_variances(belief.var_now, var_rel0, cfg.dt, cfg.N, degenerate=belief.degenerate)
    qp = build_qp(cfg, belief.p_now, p_rel0, var, v_now, a_prev, allow_zero_var=belief.degenerate)
    sol = solve_qp(qp, tol=cfg.tol, max_iter=cfg.max_iter)
    if dump_path is not None:
        dump_qp(qp, Path(dump_path), sol)
    margins = safety_margins(cfg, var, allow_zero_var=belief.degenerate)

    N = cfg.N
    x = sol.x
    if sol.status != OPTIMAL:
        base = a_prev if prev_command is None else prev_command
        cmd = max(cfg.a_min, base - cfg.jerk_cap * cfg.dt)
        log.warning("QP status %s (residuals %s); falling back to braking command %.3f",
                    sol.status, sol.residuals, cmd)
        return MpcSolution(
            accelerations=np.full(N, cmd), speeds=x[N:2 * N].copy(), p=x[2 * N:3 * N].copy(),
            p_rel=x[3 * N:4 * N].copy(), slacks=np.maximum(x[4 * N:], 0.0), command=cmd,
            status=sol.status, margins=margins, fallback=True, qp_solution=sol,
        )
    accs = x[:N].copy()
    cmd = float(min(max(accs[0], cfg.a_min), cfg.a_max))
    return MpcSolution(
        accelerations=accs, speeds=x[N:2 * N].copy(), p=x[2 * N:3 * N].copy(),
        p_rel=x[3 * N:4 * N].copy(), slacks=np.maximum(x[4 * N:], 0.0), command=cmd,
        status=sol.status, margins=margins, fallback=False, qp_solution=sol,
    )

