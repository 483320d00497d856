"""Training data containers and mini-batch SGD with momentum."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import DomainError, TrainingDivergedError
from .regressor import (
    RegressorParams,
    init_params,
    inverse_softplus,
    forward_batch,
    nll_value_and_grad,
)
from .sensor import SensorModel, synth_batch

log = logging.getLogger(__name__)


@dataclass
class TrainingSet:
    """Headways ``d`` (shape ``(M,)``) and stacked features ``x`` (shape ``(M, 2F)``)."""

    d: np.ndarray
    x: np.ndarray
    d_lo: float = 1.0
    d_hi: float = 25.0

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if self.d.size == 0:
            raise DomainError("training set is empty")
        if self.x.shape[0] != self.d.size or self.x.shape[1] % 2:
            raise DomainError(f"feature matrix shape {self.x.shape} does not match {self.d.size} targets")
        bad = (self.d < self.d_lo) | (self.d > self.d_hi)
        if bad.any():
            j = int(np.argmax(bad))
            raise DomainError(
                f"headway {self.d[j]} at row {j} outside sensor range [{self.d_lo}, {self.d_hi}]"
            )
        if not np.all(np.isfinite(self.x)):
            raise DomainError("features must be finite")

    def __len__(self) -> int:
        return self.d.size

    @property
    def n_features(self) -> int:
        return self.x.shape[1] // 2

    @classmethod
    def filtered(cls, d, x, d_lo: float = 1.0, d_hi: float = 25.0) -> "TrainingSet":
        """Drop rows whose headway lies outside ``[d_lo, d_hi]``."""
        d = np.asarray(d, dtype=float)
        keep = (d >= d_lo) & (d <= d_hi)
        if not keep.all():
            log.info("dropping %d samples outside [%g, %g] m", int((~keep).sum()), d_lo, d_hi)
        return cls(d[keep], np.asarray(x)[keep], d_lo, d_hi)

    def subset(self, idx: np.ndarray) -> "TrainingSet":
        return TrainingSet(self.d[idx], self.x[idx], self.d_lo, self.d_hi)

    def write_csv(self, path) -> None:
        f2 = self.x.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["d"] + [f"f{j + 1}" for j in range(f2)])
            for d, row in zip(self.d, self.x):
                w.writerow([repr(float(d))] + [repr(float(v)) for v in row])

    @classmethod
    def read_csv(cls, path, d_lo: float = 1.0, d_hi: float = 25.0) -> "TrainingSet":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "d":
            raise DomainError(f"{path}: expected header starting with 'd'")
        data = []
        for lineno, row in enumerate(rows[1:], start=2):
            try:
                data.append([float(v) for v in row])
            except ValueError as exc:
                raise DomainError(f"{path}:{lineno}: {exc}") from None
        arr = np.array(data)
        return cls(arr[:, 0], arr[:, 1:], d_lo, d_hi)


def generate_training_set(model: SensorModel, n: int, seed: int, ood: bool = False) -> TrainingSet:
    """Headways uniform over the sensor range, one noisy observation each."""
    rng = np.random.default_rng(seed)
    d = rng.uniform(model.d_lo, model.d_hi, size=n)
    return TrainingSet(d, synth_batch(model, d, ood, rng), model.d_lo, model.d_hi)


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.001
    momentum: float = 0.9
    epochs: int = 100
    batch_size: int = 60
    seed: int = 0
    val_fraction: float = 0.2
    clip_norm: Optional[float] = 10.0


def train_regressor(
    data: TrainingSet,
    hyper: TrainHyper = TrainHyper(),
    hidden: int = 32,
    callback: Optional[Callable[[int, float, float], None]] = None,
) -> RegressorParams:
    """Fit one regressor and return the parameters with the best validation loss.

    Each step follows the gradient of the loss summed over the mini-batch.
    Inputs and the mean head are standardised with training-split statistics
    while fitting; both affine maps are folded back into the weights before
    returning, so the result acts on raw features and outputs metres. The
    variance head is never rescaled. ``callback(epoch, train_loss, val_loss)``
    runs after every epoch with mean per-sample losses.
    """
    rng = np.random.default_rng(hyper.seed)
    m = len(data)
    perm = rng.permutation(m)
    n_val = max(1, int(round(hyper.val_fraction * m))) if m > 1 else 0
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    if tr_idx.size == 0:
        raise DomainError("training split is empty")
    mu = data.x[tr_idx].mean(axis=0)
    sd = data.x[tr_idx].std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    x_std = (data.x - mu) / sd
    d_tr, x_tr = data.d[tr_idx], x_std[tr_idx]
    d_va, x_va = (data.d[val_idx], x_std[val_idx]) if n_val else (d_tr, x_tr)

    d_mu = float(np.mean(d_tr))
    d_sd = float(np.std(d_tr)) if d_tr.size > 1 else 0.0
    d_sd = d_sd if d_sd > 1e-9 else 1.0
    # a unit initial variance keeps the mean head from stalling on the
    # predict-the-average plateau that a wide initial variance invites
    params = init_params(data.n_features, hidden, rng, var_bias=inverse_softplus(1.0))
    theta = params.flat()
    velocity = np.zeros_like(theta)
    best = params.copy()
    best_val = _val_nll(params, d_va, x_va, d_mu, d_sd)

    bs = max(1, min(hyper.batch_size, d_tr.size))
    for epoch in range(hyper.epochs):
        order = rng.permutation(d_tr.size)
        total = 0.0
        for start in range(0, d_tr.size, bs):
            idx = order[start:start + bs]
            loss, grad = nll_value_and_grad(params, d_tr[idx], x_tr[idx], d_mu, d_sd)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch starting {start} "
                    f"(lr={hyper.lr}, momentum={hyper.momentum}, hidden={hidden})"
                )
            total += loss
            step = grad.flat() / idx.size
            if hyper.clip_norm is not None:
                norm = float(np.linalg.norm(step))
                if norm > hyper.clip_norm:
                    step = step * (hyper.clip_norm / norm)
            velocity = hyper.momentum * velocity - hyper.lr * step
            theta = theta + velocity
            params = params.with_flat(theta)
        val = _val_nll(params, d_va, x_va, d_mu, d_sd)
        if not math.isfinite(val):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        if val < best_val:
            best_val, best = val, params.copy()
        if callback is not None:
            callback(epoch, total / d_tr.size, val)
    log.debug("trained H=%d seed=%d best val nll %.4f", hidden, hyper.seed, best_val)
    return _fold(best, mu, sd, d_mu, d_sd)


def _fold(params: RegressorParams, mu, sd, d_mu: float, d_sd: float) -> RegressorParams:
    w1 = params.w1 / sd
    b1 = params.b1 - w1 @ mu
    w2 = params.w2.copy()
    b2 = params.b2.copy()
    w2[0] *= d_sd
    b2[0] = d_mu + d_sd * b2[0]
    return RegressorParams(w1, b1, w2, b2, eps=params.eps)


def _val_nll(params: RegressorParams, d, x, d_mu: float, d_sd: float) -> float:
    p, var = forward_batch(params, x)
    p = d_mu + d_sd * p
    return float(np.mean(np.log(var) + (d - p) ** 2 / var))
