"""Longitudinal point-mass kinematics for the ego and lead vehicles.

Positions refer to the vehicle's geometric centre; the bumper-to-bumper
headway subtracts half of each vehicle length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError

V_MIN = 0.0
V_MAX = 34.0
A_MIN = -6.0
A_MAX = 6.0


def _check_finite(**values: float) -> None:
    for name, val in values.items():
        if not math.isfinite(val):
            raise DomainError(f"{name} must be finite, got {val!r}")


@dataclass(frozen=True)
class VehicleState:
    x: float
    v: float


@dataclass(frozen=True)
class ControlInput:
    a: float


@dataclass(frozen=True)
class VehicleGeometry:
    length: float = 4.8

    def __post_init__(self):
        if not self.length > 0:
            raise DomainError(f"vehicle length must be positive, got {self.length}")


@dataclass(frozen=True)
class SpeedTrajectory:
    """Uniformly sampled speed trace, ``samples[j]`` taken at ``j * dt_sample``."""

    dt_sample: float
    samples: tuple[float, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(float(s) for s in self.samples))
        if len(self.samples) < 2:
            raise DomainError("a speed trajectory needs at least 2 samples")
        if not (math.isfinite(self.dt_sample) and self.dt_sample > 0):
            raise DomainError(f"dt_sample must be positive, got {self.dt_sample}")
        for j, s in enumerate(self.samples):
            if not (V_MIN <= s <= V_MAX):
                raise DomainError(
                    f"sample {j} speed {s} outside [{V_MIN:g}, {V_MAX:g}] m/s"
                )

    @property
    def duration(self) -> float:
        return self.dt_sample * (len(self.samples) - 1)

    @property
    def mean_speed(self) -> float:
        return math.fsum(self.samples) / len(self.samples)


def step_kinematics(
    s: VehicleState,
    u: ControlInput,
    dt: float,
    v_min: float = V_MIN,
    v_max: float = V_MAX,
    a_min: float = A_MIN,
    a_max: float = A_MAX,
) -> VehicleState:
    """Advance one vehicle by ``dt`` under constant acceleration.

    Speed saturates at ``[v_min, v_max]``. When the limit is reached inside
    the step the position integrates the accelerating phase up to the
    crossing time and constant speed afterwards.
    """
    _check_finite(x=s.x, v=s.v, a=u.a, dt=dt)
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if not (a_min <= u.a <= a_max):
        raise DomainError(f"acceleration {u.a} outside [{a_min}, {a_max}]")

    a = u.a
    v_free = s.v + a * dt
    if v_min <= v_free <= v_max:
        return VehicleState(s.x + s.v * dt + 0.5 * a * dt * dt, v_free)

    limit = v_max if v_free > v_max else v_min
    if a == 0.0:
        # started outside the band; snap speed to the limit
        return VehicleState(s.x + limit * dt, limit)
    t_hit = (limit - s.v) / a
    if t_hit <= 0.0:
        return VehicleState(s.x + limit * dt, limit)
    x_hit = s.x + s.v * t_hit + 0.5 * a * t_hit * t_hit
    return VehicleState(x_hit + limit * (dt - t_hit), limit)


def bumper_headway(
    lead: VehicleState,
    ego: VehicleState,
    g_lead: VehicleGeometry,
    g_ego: VehicleGeometry,
) -> float:
    """Rear bumper of the lead minus front bumper of the ego.

    Negative values mean the vehicles overlap and are returned unchanged.
    """
    return (lead.x - 0.5 * g_lead.length) - (ego.x + 0.5 * g_ego.length)


def lead_speed_at(traj: SpeedTrajectory, t: float) -> float:
    """Linear interpolation of the trace, held at the last sample beyond its end."""
    if not math.isfinite(t):
        raise DomainError(f"t must be finite, got {t!r}")
    if t < 0:
        raise DomainError(f"t must be non-negative, got {t}")
    pos = t / traj.dt_sample
    j = int(math.floor(pos))
    last = len(traj.samples) - 1
    if j >= last:
        return traj.samples[last]
    frac = pos - j
    return traj.samples[j] + frac * (traj.samples[j + 1] - traj.samples[j])

