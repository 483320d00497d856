"""Lead-vehicle speed traces: CSV ingest, variability filter, synthetic generator.

CSV schema: header ``t,v`` (one trace per file) or ``id,t,v`` (traces
grouped by id, in order of first appearance). Times must start at 0 and be
uniformly spaced.
"""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import DomainError
from ..kinematics import A_MAX, A_MIN, V_MAX, V_MIN, SpeedTrajectory

log = logging.getLogger(__name__)

_SPACING_TOL = 1e-6


class TrajectoryFormatError(DomainError):
    pass


def _parse_float(cell: str, what: str, line: int, path) -> float:
    try:
        val = float(cell)
    except ValueError:
        raise TrajectoryFormatError(f"{path}:{line}: {what} {cell!r} is not a number") from None
    if not math.isfinite(val):
        raise TrajectoryFormatError(f"{path}:{line}: {what} must be finite, got {cell!r}")
    return val


def _build(name: str, rows: list[tuple[int, float, float]], path) -> SpeedTrajectory:
    if len(rows) < 2:
        raise TrajectoryFormatError(f"{path}: trajectory {name!r} needs at least 2 samples")
    ts = [r[1] for r in rows]
    if abs(ts[0]) > _SPACING_TOL:
        raise TrajectoryFormatError(f"{path}:{rows[0][0]}: trajectory {name!r} must start at t=0")
    dt = ts[1] - ts[0]
    for (line, t, _), t_prev in zip(rows[1:], ts):
        if t <= t_prev:
            raise TrajectoryFormatError(f"{path}:{line}: time {t} is not increasing")
    for j, (line, t, _) in enumerate(rows):
        if abs(t - j * dt) > _SPACING_TOL * max(1.0, abs(t)):
            raise TrajectoryFormatError(f"{path}:{line}: sampling is not uniform (expected t={j * dt:g})")
    return SpeedTrajectory(dt, tuple(r[2] for r in rows), name=name)


def load_trajectories(path) -> list[SpeedTrajectory]:
    """Read one ``t,v`` trace or several ``id,t,v`` traces from a CSV file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if header is None or not any(c.strip() for c in header):
        raise TrajectoryFormatError(f"{path}: empty file")
    header = [c.strip() for c in header]
    if header == ["t", "v"]:
        has_id = False
    elif header == ["id", "t", "v"]:
        has_id = True
    else:
        raise TrajectoryFormatError(f"{path}:1: expected header 't,v' or 'id,t,v', got {','.join(header)!r}")

    groups: dict[str, list[tuple[int, float, float]]] = {}
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise TrajectoryFormatError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        key = row[0].strip() if has_id else path.stem
        t = _parse_float(row[-2].strip(), "time", line, path)
        v = _parse_float(row[-1].strip(), "speed", line, path)
        if not (V_MIN <= v <= V_MAX):
            raise TrajectoryFormatError(
                f"{path}:{line}: speed {v} outside [{V_MIN:g}, {V_MAX:g}] m/s (dataset limit v_max = {V_MAX:g})"
            )
        groups.setdefault(key, []).append((line, t, v))
    if not groups:
        raise TrajectoryFormatError(f"{path}: no samples")
    return [_build(name, rows, path) for name, rows in groups.items()]


def write_trajectories(trajs: Sequence[SpeedTrajectory], path) -> None:
    """Write traces in the ``id,t,v`` layout (``t,v`` for a single unnamed trace)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        single = len(trajs) == 1 and not trajs[0].name
        w.writerow(["t", "v"] if single else ["id", "t", "v"])
        for k, tr in enumerate(trajs):
            name = tr.name or f"traj{k:03d}"
            for j, v in enumerate(tr.samples):
                t = repr(j * tr.dt_sample)
                w.writerow([t, repr(v)] if single else [name, t, repr(v)])


def speed_std(traj: SpeedTrajectory) -> float:
    return float(np.std(np.asarray(traj.samples)))


def filter_trajectories(trajs: Iterable[SpeedTrajectory], min_std: float = 4.0) -> list[SpeedTrajectory]:
    """Keep traces whose population speed standard deviation exceeds ``min_std``."""
    if min_std <= 0:
        return list(trajs)
    return [t for t in trajs if speed_std(t) > min_std]


def synthetic_trajectory(seed: int, duration: float = 20.0, dt_sample: float = 0.04,
                         v_lo: float = 12.0, v_hi: float = 26.0,
                         amplitude: tuple[float, float] = (6.0, 8.0),
                         ripple: tuple[float, float] = (0.2, 0.8), name: str = "") -> SpeedTrajectory:
    """Lead trace that swings around its own mean speed.

    A base speed drawn from ``[v_lo, v_hi]`` carries one slow sinusoidal
    swing (amplitude drawn from ``amplitude``, sign random, period close to
    the duration) plus a small faster ripple, so the trace starts at its base
    speed and its spread lands around 4-6 m/s. Speeds are clipped to
    ``[0, 34]``; accelerations stay well inside ``[-6, 6]`` for the defaults.
    """
    if not (V_MIN <= v_lo <= v_hi <= V_MAX):
        raise DomainError(f"speed band must satisfy 0 <= v_lo <= v_hi <= 34, got [{v_lo}, {v_hi}]")
    if not (dt_sample > 0 and duration > dt_sample):
        raise DomainError("need dt_sample > 0 and duration > dt_sample")
    rng = np.random.default_rng(seed)
    base = rng.uniform(v_lo, v_hi)
    amp = rng.uniform(*amplitude) * rng.choice([-1.0, 1.0])
    period = duration * rng.uniform(0.9, 1.2)
    r_amp, r_period = rng.uniform(*ripple), rng.uniform(4.0, 8.0)
    r_phase = rng.uniform(0.0, 2.0 * math.pi)
    t = np.arange(int(round(duration / dt_sample)) + 1) * dt_sample
    v = (base + amp * np.sin(2.0 * math.pi * t / period)
         + r_amp * np.sin(2.0 * math.pi * t / r_period + r_phase))
    return SpeedTrajectory(dt_sample, tuple(float(x) for x in np.clip(v, V_MIN, V_MAX)), name=name)


def synthetic_batch(n: int, seed: int, min_std: float = 4.0, **kw) -> list[SpeedTrajectory]:
    """``n`` synthetic traces that pass the variability filter."""
    out, k = [], 0
    while len(out) < n:
        tr = synthetic_trajectory(seed * 100003 + k, name=f"syn{len(out):03d}", **kw)
        k += 1
        if speed_std(tr) > min_std:
            out.append(tr)
        if k > 100 * max(n, 1):
            raise DomainError(f"generator cannot produce traces with std > {min_std}")
    return out


def finite_difference_accels(traj: SpeedTrajectory) -> np.ndarray:
    return np.diff(np.asarray(traj.samples)) / traj.dt_sample


def check_accel_range(traj: SpeedTrajectory) -> int:
    """Number of sample intervals whose acceleration leaves ``[a_min, a_max]``."""
    acc = finite_difference_accels(traj)
    bad = int(np.sum((acc < A_MIN) | (acc > A_MAX)))
    if bad:
        log.warning("trajectory %r: %d intervals exceed the acceleration range; they will be clipped",
                    traj.name, bad)
    return bad
