"""Normal and Student-t distribution functions.

The t distribution goes through the regularized incomplete beta function,
evaluated by its continued fraction (modified Lentz).
"""

from __future__ import annotations

import math

_TINY = 1e-300
_EPS = 1e-16
_MAX_ITER = 20000


class ConvergenceError(ArithmeticError):
    pass


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_sf(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def _betacf(a: float, b: float, x: float) -> float:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ConvergenceError(f"incomplete beta continued fraction failed for a={a}, b={b}, x={x}")


def _stirling_correction(x: float) -> float:
    """lgamma(x) - [(x - 1/2) log x - x + log(2 pi) / 2], for x >= 10."""
    x2 = x * x
    return (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - (1.0 / 1680.0 - 1.0 / (1188.0 * x2)) / x2) / x2) / x2) / x


def _log_beta(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if a < 10.0:
        return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    # lgamma(a) - lgamma(a + b) without cancellation for large a.
    diff = (
        -(a - 0.5) * math.log1p(b / a)
        - b * math.log(a + b)
        + b
        + _stirling_correction(a)
        - _stirling_correction(a + b)
    )
    return math.lgamma(b) + diff


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = a * math.log(x) + b * math.log1p(-x) - _log_beta(a, b)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def _t_tail(t: float, df: float) -> float:
    """P(T > |t|) for a t variable with ``df`` degrees of freedom."""
    t2 = t * t
    # Pick the argument that avoids cancellation in 1 - x.
    if t2 < df:
        return 0.5 * (1.0 - betainc(0.5, df / 2.0, t2 / (df + t2)))
    return 0.5 * betainc(df / 2.0, 0.5, df / (df + t2))


def student_t_cdf(x: float, df: float) -> float:
    if not df >= 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if x == 0:
        return 0.5
    tail = _t_tail(x, df)
    return 1.0 - tail if x > 0 else tail


def student_t_sf(x: float, df: float) -> float:
    return student_t_cdf(-x, df)


def student_t_two_sided(t: float, df: float) -> float:
    if not df >= 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    return min(1.0, 2.0 * _t_tail(t, df))
