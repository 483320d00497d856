"""Two-headed feed-forward headway regressor and its Gaussian NLL.

Input is the concatenated ``[left; right]`` feature vector of length ``2F``;
one ReLU hidden layer of width ``H`` feeds a linear output ``(p, s)``. The
raw variance head ``s`` becomes ``var = eps + softplus(s)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DomainError
from .sensor import ObservationPair

VAR_EPS = 1e-6


@dataclass(frozen=True)
class HeadwayEstimate:
    p: float
    var: float

    def __post_init__(self):
        if not np.isfinite(self.p):
            raise DomainError(f"headway mean must be finite, got {self.p}")
        if not self.var > 0:
            raise DomainError(f"headway variance must be positive, got {self.var}")


@dataclass
class RegressorParams:
    w1: np.ndarray  # (H, 2F)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (2, H)
    b2: np.ndarray  # (2,)
    eps: float = VAR_EPS

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=float)
        self.b1 = np.asarray(self.b1, dtype=float)
        self.w2 = np.asarray(self.w2, dtype=float)
        self.b2 = np.asarray(self.b2, dtype=float)
        h, two_f = self.w1.shape
        if two_f % 2:
            raise DomainError(f"input width must be even (2F), got {two_f}")
        if self.b1.shape != (h,) or self.w2.shape != (2, h) or self.b2.shape != (2,):
            raise DomainError(
                f"inconsistent parameter shapes: w1 {self.w1.shape}, b1 {self.b1.shape}, "
                f"w2 {self.w2.shape}, b2 {self.b2.shape}"
            )

    @property
    def n_features(self) -> int:
        return self.w1.shape[1] // 2

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return self.w1, self.b1, self.w2, self.b2

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "RegressorParams":
        out, i = [], 0
        for a in self.arrays():
            out.append(np.array(vec[i:i + a.size]).reshape(a.shape))
            i += a.size
        return RegressorParams(*out, eps=self.eps)

    def copy(self) -> "RegressorParams":
        return RegressorParams(*(a.copy() for a in self.arrays()), eps=self.eps)

    def to_dict(self) -> dict:
        # floats go through repr, which round-trips float64 exactly
        return {
            "n_features": self.n_features,
            "hidden": self.hidden,
            "eps": self.eps,
            "w1": self.w1.ravel().tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.ravel().tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RegressorParams":
        f, h = int(data["n_features"]), int(data["hidden"])
        return cls(
            w1=np.array(data["w1"], dtype=float).reshape(h, 2 * f),
            b1=np.array(data["b1"], dtype=float),
            w2=np.array(data["w2"], dtype=float).reshape(2, h),
            b2=np.array(data["b2"], dtype=float),
            eps=float(data["eps"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "RegressorParams":
        return cls.from_dict(json.loads(text))


def init_params(n_features: int, hidden: int, rng: np.random.Generator,
                mean_bias: float = 0.0, var_bias: float = 0.0) -> RegressorParams:
    """He-initialised weights; output biases start at the given raw values."""
    two_f = 2 * n_features
    w1 = rng.standard_normal((hidden, two_f)) * np.sqrt(2.0 / two_f)
    b1 = np.zeros(hidden)
    w2 = rng.standard_normal((2, hidden)) * np.sqrt(1.0 / hidden)
    b2 = np.array([mean_bias, var_bias])
    return RegressorParams(w1, b1, w2, b2)


def softplus(s):
    s = np.asarray(s, dtype=float)
    return np.where(s > 0, s + np.log1p(np.exp(-np.abs(s))), np.log1p(np.exp(np.minimum(s, 0.0))))


def inverse_softplus(y: float) -> float:
    """Raw head value ``s`` with ``softplus(s) == y`` for ``y > 0``."""
    if y <= 0:
        raise DomainError(f"softplus image is positive, got {y}")
    return float(y + np.log(-np.expm1(-y)))


def _sigmoid(s):
    s = np.asarray(s, dtype=float)
    e = np.exp(-np.abs(s))
    return np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _as_matrix(params: RegressorParams, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params.w1.shape[1]:
        raise DomainError(f"expected {params.w1.shape[1]} input features, got {x.shape[1]}")
    return x


def forward_batch(params: RegressorParams, x) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance for each row of ``x`` (shape ``(M, 2F)``)."""
    x = _as_matrix(params, x)
    hid = np.maximum(0.0, x @ params.w1.T + params.b1)
    out = hid @ params.w2.T + params.b2
    return out[:, 0], params.eps + softplus(out[:, 1])


def regressor_forward(params: RegressorParams, obs: ObservationPair) -> HeadwayEstimate:
    if obs.left.shape != obs.right.shape or obs.left.shape[0] != params.n_features:
        raise DomainError(
            f"observation shapes {obs.left.shape}/{obs.right.shape} do not match F={params.n_features}"
        )
    p, var = forward_batch(params, obs.stacked())
    return HeadwayEstimate(float(p[0]), float(var[0]))


def _split_batch(batch) -> tuple[np.ndarray, np.ndarray]:
    """Accept ``(d, X)`` arrays or a sequence of ``(d, ObservationPair)``."""
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[1], np.ndarray):
        d, x = batch
        return np.asarray(d, dtype=float), np.asarray(x, dtype=float)
    d = np.array([float(item[0]) for item in batch])
    x = np.stack([item[1].stacked() for item in batch])
    return d, x


def nll_loss(params: RegressorParams, batch) -> float:
    """Summed ``log var + (d - p)^2 / var`` over the batch."""
    d, x = _split_batch(batch)
    if d.size == 0:
        raise DomainError("batch must be non-empty")
    p, var = forward_batch(params, x)
    return float(np.sum(np.log(var) + (d - p) ** 2 / var))


def nll_value_and_grad(params: RegressorParams, d: np.ndarray, x: np.ndarray,
                       mean_offset: float = 0.0, mean_scale: float = 1.0) -> tuple[float, RegressorParams]:
    """Summed NLL and its gradient.

    With ``mean_offset``/``mean_scale`` the mean head is read as
    ``mean_offset + mean_scale * out`` (training-time preconditioning).
    """
    x = _as_matrix(params, x)
    pre = x @ params.w1.T + params.b1
    hid = np.maximum(0.0, pre)
    out = hid @ params.w2.T + params.b2
    p, s = mean_offset + mean_scale * out[:, 0], out[:, 1]
    var = params.eps + softplus(s)
    r = d - p
    loss = float(np.sum(np.log(var) + r * r / var))

    g_p = -2.0 * mean_scale * r / var
    g_s = (1.0 / var - r * r / (var * var)) * _sigmoid(s)
    g_out = np.stack([g_p, g_s], axis=1)  # (M, 2)
    g_w2 = g_out.T @ hid
    g_b2 = g_out.sum(axis=0)
    g_hid = (g_out @ params.w2) * (pre > 0)
    g_w1 = g_hid.T @ x
    g_b1 = g_hid.sum(axis=0)
    return loss, RegressorParams(g_w1, g_b1, g_w2, g_b2, eps=params.eps)


def nll_gradient(params: RegressorParams, batch) -> RegressorParams:
    """Exact gradient of :func:`nll_loss`, shaped like ``params``."""
    d, x = _split_batch(batch)
    if d.size == 0:
        raise DomainError("batch must be non-empty")
    return nll_value_and_grad(params, d, x)[1]


def mean_nll(params: RegressorParams, d: np.ndarray, x: np.ndarray) -> float:
    p, var = forward_batch(params, x)
    return float(np.mean(np.log(var) + (d - p) ** 2 / var))


def stack_members(members: Sequence[RegressorParams], x) -> tuple[np.ndarray, np.ndarray]:
    """Per-member predictions, each of shape ``(n_members, M)``."""
    ps, vs = zip(*(forward_batch(m, x) for m in members))
    return np.stack(ps), np.stack(vs)
