"""Safety and comfort metrics over closed-loop records."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, field
from typing import Optional, Sequence

import numpy as np

from ..errors import DomainError

TOC_EDGES = tuple(float(e) for e in range(0, 21))            # seconds
JERK_EDGES = tuple(float(e) / 2 for e in range(-16, 17))     # m/s^3
ACCEL_EDGES = tuple(float(e) for e in range(-6, 7))          # m/s^2
TTS_EDGES = tuple(float(e) for e in range(0, 21))            # seconds


def time_to_collision(rec) -> Optional[float]:
    """Gap over closing speed when the ego is faster, else ``None``."""
    closing = rec.v_ego - rec.v_lead
    if closing <= 0:
        return None
    return max(rec.d_true, 0.0) / closing


def time_to_safety(records: Sequence, d_s: float, T_s: float) -> tuple[float, bool]:
    """First time with ``d >= d_s + T_s v``; ``(last t, False)`` if never reached."""
    if not records:
        raise DomainError("records must be non-empty")
    for r in records:
        if r.d_true >= d_s + T_s * r.v_ego:
            return r.t, True
    return records[-1].t, False


def command_sequence(records: Sequence) -> list[float]:
    """Distinct held commands in order: one entry per plan (and for the cold-start hold)."""
    out, last_id = [], None
    for r in records:
        if r.plan_id != last_id:
            out.append(r.a_cmd)
            last_id = r.plan_id
    return out


def jerk_series(records: Sequence, replan_period: float) -> list[float]:
    """Difference quotients of successive held commands over the replan period."""
    if replan_period <= 0:
        raise DomainError("replan period must be positive")
    cmds = command_sequence(records)
    return [(b - a) / replan_period for a, b in zip(cmds, cmds[1:])]


def histogram(values: Sequence[float], edges: Sequence[float]) -> dict:
    """Counts per bin; values outside the edges land in the end bins."""
    edges = np.asarray(edges, dtype=float)
    vals = np.clip(np.asarray(values, dtype=float), edges[0], edges[-1])
    counts, _ = np.histogram(vals, bins=edges)
    return {"edges": edges.tolist(), "counts": counts.astype(int).tolist()}


@dataclass
class MetricsReport:
    min_toc: Optional[float]
    time_to_safety: float
    safety_reached: bool
    max_abs_jerk: float
    min_headway: float
    speed_rms_error: float
    collision: bool
    mean_speed: float
    max_abs_accel: float
    n_frames: int
    toc_hist: dict = field(default_factory=dict)
    jerk_hist: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(**data)


def compute_metrics(records: Sequence, d_s: float, T_s: float, v_s: float,
                    replan_period: float) -> MetricsReport:
    if not records:
        raise DomainError("records must be non-empty")
    tocs = [x for x in (time_to_collision(r) for r in records) if x is not None]
    tts, reached = time_to_safety(records, d_s, T_s)
    jerks = jerk_series(records, replan_period)
    d = np.array([r.d_true for r in records])
    v = np.array([r.v_ego for r in records])
    a = np.array([r.a_cmd for r in records])
    min_headway = float(d.min())
    return MetricsReport(
        min_toc=float(min(tocs)) if tocs else None,
        time_to_safety=float(tts),
        safety_reached=bool(reached),
        max_abs_jerk=float(max((abs(j) for j in jerks), default=0.0)),
        min_headway=min_headway,
        speed_rms_error=float(math.sqrt(np.mean((v - v_s) ** 2))),
        collision=bool(min_headway <= 0.0),
        mean_speed=float(v.mean()),
        max_abs_accel=float(np.abs(a).max()),
        n_frames=len(records),
        toc_hist=histogram(tocs, TOC_EDGES),
        jerk_hist=histogram(jerks, JERK_EDGES),
        params={"d_s": d_s, "T_s": T_s, "v_s": v_s, "replan_period": replan_period},
    )
