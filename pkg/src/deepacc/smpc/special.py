"""Inverse error function and Gaussian constraint tightening."""
from __future__ import annotations

import math

from ..errors import DomainError

_SQRT_PI_2 = 2.0 / math.sqrt(math.pi)


def _initial_guess(y: float) -> float:
    # Giles' single-precision polynomial, good to ~1e-7 relative
    w = -math.log((1.0 - y) * (1.0 + y))
    if w < 5.0:
        w -= 2.5
        p = 2.81022636e-08
        p = 3.43273939e-07 + p * w
        p = -3.5233877e-06 + p * w
        p = -4.39150654e-06 + p * w
        p = 0.00021858087 + p * w
        p = -0.00125372503 + p * w
        p = -0.00417768164 + p * w
        p = 0.246640727 + p * w
        p = 1.50140941 + p * w
    else:
        w = math.sqrt(w) - 3.0
        p = -0.000200214257
        p = 0.000100950558 + p * w
        p = 0.00134934322 + p * w
        p = -0.00367342844 + p * w
        p = 0.00573950773 + p * w
        p = -0.0076224613 + p * w
        p = 0.00943887047 + p * w
        p = 1.00167406 + p * w
        p = 2.83297682 + p * w
    return p * y


def inverse_erf(y: float) -> float:
    """``x`` with ``erf(x) == y`` for ``|y| < 1``.

    A polynomial seed is refined by Halley steps on ``erf`` (or ``erfc`` in
    the upper tail, where ``1 - y`` carries the significant digits).
    """
    if not math.isfinite(y) or abs(y) >= 1.0:
        raise DomainError(f"inverse_erf is defined on (-1, 1), got {y!r}")
    if y == 0.0:
        return 0.0
    if y < 0.0:
        return -inverse_erf(-y)
    x = _initial_guess(y)
    tail = y > 0.9
    q = 1.0 - y
    for _ in range(8):
        f = (q - math.erfc(x)) if tail else (math.erf(x) - y)
        fp = _SQRT_PI_2 * math.exp(-x * x)
        step = f / (fp + x * f)
        x -= step
        if abs(step) <= 1e-16 * max(1.0, abs(x)):
            break
    return x


def tightening_margin(var: float, eps: float, allow_zero_var: bool = False) -> float:
    """Offset ``sqrt(2 var) * erfinv(1 - 2 eps)``: the ``(1-eps)`` quantile of ``N(0, var)``."""
    if not (0.0 < eps < 1.0):
        raise DomainError(f"risk level must lie in (0, 1), got {eps}")
    if var < 0 or (var == 0 and not allow_zero_var):
        raise DomainError(f"variance must be positive, got {var}")
    return math.sqrt(2.0 * var) * inverse_erf(1.0 - 2.0 * eps)
