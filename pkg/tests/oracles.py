"""Reference implementations used only by the tests.

Each oracle is written independently of the package code: brute force,
sampling or a different numerical route to the same quantity.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


# --- finite differences -------------------------------------------------------

def central_difference(f, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.empty_like(theta)
    for j in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        g[j] = (f(tp) - f(tm)) / (2.0 * h)
    return g


def nll_by_hand(theta: np.ndarray, shapes, d: np.ndarray, x: np.ndarray, eps: float = 1e-6) -> float:
    """Summed Gaussian NLL of the two-headed ReLU net, parameters unpacked from ``theta``."""
    parts, k = [], 0
    for shp in shapes:
        size = int(np.prod(shp))
        parts.append(theta[k:k + size].reshape(shp))
        k += size
    w1, b1, w2, b2 = parts
    hid = np.maximum(0.0, x @ w1.T + b1)
    out = hid @ w2.T + b2
    s = out[:, 1]
    var = eps + np.logaddexp(0.0, s)
    return float(np.sum(np.log(var) + (d - out[:, 0]) ** 2 / var))


# --- mixtures ------------------------------------------------------------------

def mc_mixture(means, variances, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Sample mean and variance of an equal-weight Gaussian mixture."""
    means, sds = np.asarray(means, float), np.sqrt(np.asarray(variances, float))
    comp = rng.integers(0, means.size, n)
    draws = means[comp] + sds[comp] * rng.standard_normal(n)
    return float(draws.mean()), float(draws.var(ddof=1))


# --- belief rollout ------------------------------------------------------------

def mc_rollout(p_prev, var_prev, p_now, var_now, a_prev, dt, accs, n, rng):
    """Sampled headway / relative-speed paths under the per-step independence reading.

    Two headway estimates are drawn independently; the relative speed is their
    difference quotient. Each step advances the headway with the sampled
    relative speed and forms the next relative speed from the new and the old
    headway, with the samples re-paired at random so that the quantities
    combined in a step are independent.
    """
    d_prev = rng.normal(p_prev, math.sqrt(var_prev), n)
    d_now = rng.normal(p_now, math.sqrt(var_now), n)
    dv = (d_now - d_prev) / dt - 0.5 * a_prev * dt
    d = rng.permutation(d_now)
    ds, dvs = [d], [dv]
    for a in accs:
        d_next = d + dv * dt - 0.5 * a * dt * dt
        dv_next = (d_next - rng.permutation(d)) / dt - 0.5 * a * dt
        d, dv = d_next, rng.permutation(dv_next)
        ds.append(d)
        dvs.append(dv)
    return np.array(ds), np.array(dvs)


# --- inverse error function ----------------------------------------------------

def erf_series(x: float) -> float:
    """Maclaurin series of erf, summed with fsum (fine for |x| <= 3)."""
    terms, n, term = [], 0, x
    while True:
        t = term / (2 * n + 1)
        terms.append(t)
        if abs(t) < 1e-30:
            break
        n += 1
        term *= -x * x / n
    return 2.0 / math.sqrt(math.pi) * math.fsum(terms)


def inverse_erf_bisection(y: float, lo: float = -4.0, hi: float = 4.0) -> float:
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if erf_series(mid) < y:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


# --- QP by enumeration ---------------------------------------------------------

def qp_enumerate(P, q, A, l, u, lb, ub, feas_tol: float = 1e-9):
    """Minimum over all active sets of the face-restricted minimisers that are feasible.

    For a convex QP the optimum minimises the objective on the affine hull of
    its own active face, so the smallest feasible face minimiser is optimal.
    Returns ``(x, objective)`` or ``None`` when no feasible candidate exists.
    """
    n = q.size
    rows, lo, hi = [], [], []
    for a, lv, uv in zip(A, l, u):
        rows.append(a)
        lo.append(lv)
        hi.append(uv)
    for j in range(n):
        if math.isfinite(lb[j]) or math.isfinite(ub[j]):
            e = np.zeros(n)
            e[j] = 1.0
            rows.append(e)
            lo.append(lb[j])
            hi.append(ub[j])
    G = np.array(rows).reshape(-1, n)
    lo, hi = np.array(lo, float), np.array(hi, float)
    options = []
    for lv, uv in zip(lo, hi):
        if lv == uv:
            options.append([lv])
        else:
            opts = [None]
            if math.isfinite(lv):
                opts.append(lv)
            if math.isfinite(uv):
                opts.append(uv)
            options.append(opts)
    best = None
    for choice in itertools.product(*options):
        act = [i for i, c in enumerate(choice) if c is not None]
        if len(act) > n:
            continue
        Ga = G[act]
        ba = np.array([choice[i] for i in act], float)
        k = len(act)
        K = np.zeros((n + k, n + k))
        K[:n, :n] = P
        K[:n, n:] = Ga.T
        K[n:, :n] = Ga
        rhs = np.concatenate([-q, ba])
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        if np.max(np.abs(K @ sol - rhs), initial=0.0) > 1e-9 * (1.0 + np.abs(rhs).max(initial=0.0)):
            continue  # unbounded on this face
        x = sol[:n]
        gx = G @ x
        scale = 1.0 + np.abs(gx).max(initial=0.0)
        if np.any(gx < lo - feas_tol * scale) or np.any(gx > hi + feas_tol * scale):
            continue
        obj = float(0.5 * x @ P @ x + q @ x)
        if best is None or obj < best[1]:
            best = (x, obj)
    return best
