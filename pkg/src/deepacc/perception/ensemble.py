"""Ensemble construction, mixture fusion and on-disk format.

An ensemble directory holds ``manifest.json`` plus one ``member_XX.json``
per regressor. The manifest records the member order, the feature width
and the sensor model the ensemble was trained against.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import DomainError
from .regressor import HeadwayEstimate, RegressorParams, regressor_forward, stack_members
from .sensor import ObservationPair, SensorModel
from .training import TrainHyper, TrainingSet, train_regressor

DEFAULT_WIDTHS = (16, 24, 32, 48, 64, 96)
DEFAULT_BATCH_SIZES = (60, 105, 500, 65, 60, 75)
DEFAULT_SEEDS = (11, 23, 37, 41, 53, 67)


def ensemble_estimate(members: Sequence[RegressorParams], obs: ObservationPair) -> HeadwayEstimate:
    """Moment-matched Gaussian of the equal-weight mixture of member outputs."""
    if not members:
        raise DomainError("ensemble needs at least one member")
    ests = [regressor_forward(m, obs) for m in members]
    return fuse_moments([e.p for e in ests], [e.var for e in ests])


def fuse_moments(means, variances) -> HeadwayEstimate:
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    p = float(np.mean(means))
    # mean-centred form of mean(var + p_i^2) - p^2; same value, no cancellation
    var = float(np.mean(variances) + np.mean((means - p) ** 2))
    return HeadwayEstimate(p, var)


def fuse_batch(members: Sequence[RegressorParams], x) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Fused mean/variance per row, plus the per-member arrays."""
    ps, vs = stack_members(members, x)
    p = ps.mean(axis=0)
    var = vs.mean(axis=0) + ((ps - p) ** 2).mean(axis=0)
    return p, var, ps, vs


@dataclass
class Diversity:
    hidden_widths: Sequence[int] = DEFAULT_WIDTHS
    seeds: Sequence[int] = DEFAULT_SEEDS
    batch_sizes: Sequence[int] = DEFAULT_BATCH_SIZES


def build_ensemble(
    data: TrainingSet,
    n: int = 6,
    diversity: Diversity = Diversity(),
    lr: float = 0.001,
    momentum: float = 0.9,
    epochs: int = 100,
) -> list[RegressorParams]:
    """Train ``n`` members; member ``i`` uses the ``i``-th width, seed and batch size (cycled)."""
    if n < 2:
        raise DomainError(f"an ensemble needs n >= 2 members, got {n}")
    members = []
    for i in range(n):
        hyper = TrainHyper(
            lr=lr,
            momentum=momentum,
            epochs=epochs,
            batch_size=diversity.batch_sizes[i % len(diversity.batch_sizes)],
            seed=diversity.seeds[i % len(diversity.seeds)],
        )
        width = diversity.hidden_widths[i % len(diversity.hidden_widths)]
        members.append(train_regressor(data, hyper, hidden=width))
    return members


@dataclass
class Ensemble:
    members: list[RegressorParams]
    sensor: SensorModel = field(default_factory=SensorModel)

    def estimate(self, obs: ObservationPair) -> HeadwayEstimate:
        return ensemble_estimate(self.members, obs)

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names = []
        for i, m in enumerate(self.members):
            name = f"member_{i:02d}.json"
            (directory / name).write_text(m.dumps() + "\n", encoding="utf-8")
            names.append(name)
        manifest = {
            "format": "deepacc-ensemble/1",
            "n_features": self.members[0].n_features,
            "members": names,
            "sensor": self.sensor.to_dict(),
        }
        path = directory / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "Ensemble":
        path = Path(path)
        manifest_path = path / "manifest.json" if path.is_dir() else path
        if not manifest_path.exists():
            raise FileNotFoundError(f"no ensemble manifest at {manifest_path}")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        members = [
            RegressorParams.loads((manifest_path.parent / name).read_text(encoding="utf-8"))
            for name in manifest["members"]
        ]
        if any(m.n_features != manifest["n_features"] for m in members):
            raise DomainError("member feature width disagrees with the manifest")
        return cls(members, SensorModel.from_dict(manifest["sensor"]))

