"""Gaussian headway and relative-speed prediction over the MPC horizon.

Two consecutive fused headway estimates ``dt`` apart give a relative-speed
belief; means then evolve affinely in the planned accelerations while the
variances follow an acceleration-independent recursion. The lead vehicle is
assumed to hold its speed over the horizon.

The variance recursion treats the headway at consecutive steps as
uncorrelated, exactly as the closed-form update does; it is not the
covariance-exact propagation of the underlying difference equations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class BeliefState:
    p_prev: float
    var_prev: float
    p_now: float
    var_now: float
    a_prev: float
    dt: float
    degenerate: bool = False  # admit zero variances (deterministic test oracles only)

    def __post_init__(self):
        for name in ("p_prev", "var_prev", "p_now", "var_now", "a_prev", "dt"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if self.dt <= 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        floor_ok = (lambda v: v >= 0) if self.degenerate else (lambda v: v > 0)
        if not (floor_ok(self.var_prev) and floor_ok(self.var_now)):
            raise DomainError(
                f"belief variances must be positive, got {self.var_prev}, {self.var_now}"
            )


@dataclass(frozen=True)
class PredictedMoments:
    p: np.ndarray
    var: np.ndarray
    p_rel: np.ndarray
    var_rel: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.p) - 1


def bootstrap_relative_speed(b: BeliefState) -> tuple[float, float]:
    """Mean and variance of lead-minus-ego speed at the newest estimate."""
    p_rel0 = (b.p_now - b.p_prev) / b.dt - 0.5 * b.a_prev * b.dt
    var_rel0 = (b.var_now + b.var_prev) / (b.dt * b.dt)
    return p_rel0, var_rel0


def propagate_variances(var0: float, var_rel0: float, dt: float, n: int,
                        degenerate: bool = False) -> tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise DomainError(f"horizon must be >= 1, got {n}")
    if degenerate:
        if var0 < 0 or var_rel0 < 0:
            raise DomainError("variances must be non-negative")
    elif not (var0 > 0 and var_rel0 > 0):
        raise DomainError(f"variances must be positive, got {var0}, {var_rel0}")
    var = np.empty(n + 1)
    var_rel = np.empty(n + 1)
    var[0], var_rel[0] = var0, var_rel0
    dt2 = dt * dt
    for i in range(n):
        var[i + 1] = var[i] + dt2 * var_rel[i]
        var_rel[i + 1] = 2.0 / dt2 * var[i] + var_rel[i]
    return var, var_rel


def propagate_means(p0: float, p_rel0: float, accs: Sequence[float], dt: float) -> tuple[np.ndarray, np.ndarray]:
    accs = np.asarray(accs, dtype=float)
    n = accs.size
    if n < 1:
        raise DomainError("need at least one acceleration")
    p = np.empty(n + 1)
    p_rel = np.empty(n + 1)
    p[0], p_rel[0] = p0, p_rel0
    for i in range(n):
        p[i + 1] = p[i] + p_rel[i] * dt - 0.5 * accs[i] * dt * dt
        p_rel[i + 1] = p_rel[i] - accs[i] * dt
    return p, p_rel


def predict(b: BeliefState, accs: Sequence[float], n: int | None = None) -> PredictedMoments:
    accs = np.asarray(accs, dtype=float)
    if n is not None and accs.size != n:
        raise DomainError(f"expected {n} accelerations, got {accs.size}")
    p_rel0, var_rel0 = bootstrap_relative_speed(b)
    p, p_rel = propagate_means(b.p_now, p_rel0, accs, b.dt)
    var, var_rel = propagate_variances(b.var_now, var_rel0, b.dt, accs.size, degenerate=b.degenerate)
    return PredictedMoments(p, var, p_rel, var_rel)
