"""Synthetic stereo camera proxy.

Each camera yields ``F`` bounded channels ``1 / (1 + d / c_j)`` with scales
``c_j`` spread geometrically, evaluated at the saturated headway
``min(d, d_sat)``. The right camera sees the same channels at a small
parallax offset. Far away the channels flatten and stop at ``d_sat``, the
stand-in for a lead vehicle shrinking to a few pixels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import DomainError

N_FEATURES = 8


def _default_ood_shift() -> tuple[float, ...]:
    # alternating sign so the shift is not a pure brightness offset
    return tuple(0.12 if j % 2 == 0 else -0.06 for j in range(N_FEATURES))


@dataclass(frozen=True)
class SensorModel:
    d_lo: float = 1.0
    d_hi: float = 25.0
    d_sat: float = 20.0
    base_noise: float = 0.002
    noise_growth: float = 0.0004
    ood_shift: tuple[float, ...] = field(default_factory=_default_ood_shift)
    ood_scale: float = 1.06
    seed: int = 0
    n_features: int = N_FEATURES
    parallax: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "ood_shift", tuple(float(s) for s in self.ood_shift))
        if not (self.d_lo < self.d_sat <= self.d_hi):
            raise DomainError(
                f"sensor range must satisfy d_lo < d_sat <= d_hi, got "
                f"{self.d_lo}, {self.d_sat}, {self.d_hi}"
            )
        if self.base_noise < 0 or self.noise_growth < 0:
            raise DomainError("noise parameters must be non-negative")
        if len(self.ood_shift) != self.n_features:
            raise DomainError(
                f"ood_shift has {len(self.ood_shift)} entries, expected {self.n_features}"
            )

    @property
    def scales(self) -> np.ndarray:
        return np.geomspace(1.0, 40.0, self.n_features)

    def noise_std(self, d_true: float) -> float:
        # grows with distance until the target has shrunk to the saturation size
        return self.base_noise + self.noise_growth * min(d_true, self.d_sat)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ood_shift"] = list(self.ood_shift)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SensorModel":
        return cls(**data)


@dataclass(frozen=True)
class ObservationPair:
    left: np.ndarray
    right: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.left, self.right])


def clean_features(model: SensorModel, d_true: float) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free left/right channels for a headway."""
    dd = min(d_true, model.d_sat)
    c = model.scales
    left = 1.0 / (1.0 + dd / c)
    right = 1.0 / (1.0 + (dd + model.parallax) / c)
    return left, right


def synth_observe(model: SensorModel, d_true: float, ood: bool, rng: np.random.Generator) -> ObservationPair:
    if not (math.isfinite(d_true) and d_true > 0):
        raise DomainError(f"d_true must be positive, got {d_true}")
    left, right = clean_features(model, d_true)
    sd = model.noise_std(d_true)
    noise = rng.standard_normal(2 * model.n_features)
    if sd > 0:
        left = left + sd * noise[: model.n_features]
        right = right + sd * noise[model.n_features:]
    if ood:
        shift = np.asarray(model.ood_shift)
        left = (left + shift) * model.ood_scale
        right = (right + shift) * model.ood_scale
    return ObservationPair(left, right)


def synth_batch(model: SensorModel, d_true: np.ndarray, ood: bool, rng: np.random.Generator) -> np.ndarray:
    """Stacked ``[left | right]`` feature rows for many headways at once."""
    return np.stack([synth_observe(model, float(d), ood, rng).stacked() for d in d_true])
