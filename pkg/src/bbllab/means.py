"""Weighted power means and the exponent bookkeeping between alpha, m and d.

Exponents are plain floats; the infinite exponents are ``math.inf`` and
``-math.inf`` and are dispatched explicitly, never approximated by large
finite values.  All evaluations of finite non-zero exponents run in the log
domain, so reciprocals of tiny arguments (alpha < 0) cannot overflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "ExponentBundle",
    "ShiftBound",
    "as_exponent",
    "dual_exponent",
    "make_bundle",
    "mean_shift_bound",
    "power_mean",
    "power_mean_k",
    "weighted_mean",
]

GEOMETRIC_CUTOFF = 1e-10
WEIGHT_SUM_TOL = 1e-12


def as_exponent(value) -> float:
    """Parse an exponent from a number or a string such as ``"-1/4"``, ``"inf"``."""
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "+inf", "infinity", "+infinity"):
            return math.inf
        if text in ("-inf", "-infinity"):
            return -math.inf
        return float(Fraction(text))
    value = float(value)
    if math.isnan(value):
        raise ValueError("exponent must not be NaN")
    return value


def weighted_mean(values, weights, alpha: float) -> np.ndarray:
    """Power mean along axis 0 of ``values`` with the given weights.

    ``values`` has shape ``(k, ...)``; the result has the trailing shape.
    No validation is done here: callers guarantee nonnegative values and a
    weight vector summing to one.  This is the single evaluation path shared
    by every mean in the package, so two-argument and k-argument results agree
    bit for bit.
    """
    vals = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float).reshape((-1,) + (1,) * (vals.ndim - 1))
    zero = np.any(vals == 0.0, axis=0)
    same = np.all(vals == vals[0], axis=0)

    if alpha == math.inf:
        out = vals.max(axis=0)
    elif alpha == -math.inf:
        out = vals.min(axis=0)
    else:
        with np.errstate(divide="ignore"):
            logs = np.log(np.where(vals > 0.0, vals, 1.0))
        if abs(alpha) < GEOMETRIC_CUTOFF:
            out = np.exp(np.sum(w * logs, axis=0))
        else:
            z = alpha * logs
            small = np.all(np.abs(z) < 1.0, axis=0)
            # expm1/log1p keeps full relative accuracy as alpha -> 0
            s = np.sum(w * np.expm1(np.where(small, z, 0.0)), axis=0)
            log_mean = np.log1p(s) / alpha
            if not np.all(small):
                with np.errstate(divide="ignore"):
                    logw = np.log(w)
                log_mean = np.where(small, log_mean, np.logaddexp.reduce(z + logw, axis=0) / alpha)
            out = np.exp(log_mean)
    out = np.where(same, vals[0], out)
    return np.where(zero, 0.0, out)


def _scalar_or_array(out: np.ndarray):
    return float(out) if np.ndim(out) == 0 else out


def power_mean(a, b, lam: float, alpha: float):
    """Weighted mean ``M_alpha(a, b; lam)`` with weights ``(1 - lam, lam)``.

    Zero whenever ``a * b == 0``, for every alpha.  Accepts scalars or
    broadcastable arrays.

    >>> power_mean(4.0, 1.0, 0.5, 0.0)
    2.0
    """
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lam must lie in (0, 1), got {lam}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("power_mean arguments must be nonnegative")
    a, b = np.broadcast_arrays(a, b)
    out = weighted_mean(np.stack([a, b]), (1.0 - lam, lam), as_exponent(alpha))
    return _scalar_or_array(out)


def _check_weights(w: Sequence[float]) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size < 2:
        raise ValueError("weight vector needs at least two entries")
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("weights must lie in [0, 1]")
    if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return w


def power_mean_k(a, w, alpha: float):
    """k-argument power mean; ``a`` has the arguments along its first axis."""
    w = _check_weights(w)
    a = np.asarray(a, dtype=float)
    if a.shape[0] != w.size:
        raise ValueError(f"{a.shape[0]} arguments but {w.size} weights")
    if np.any(a < 0):
        raise ValueError("power_mean_k arguments must be nonnegative")
    return _scalar_or_array(weighted_mean(a, w, as_exponent(alpha)))


def dual_exponent(alpha: float, n: int) -> float:
    """``alpha / (1 + n alpha)`` with the conventions at ``-1/n`` and ``+inf``."""
    alpha = as_exponent(alpha)
    if alpha == math.inf:
        return 1.0 / n
    if _is_critical(alpha, n):
        return -math.inf
    if alpha < -1.0 / n:
        raise ValueError(f"alpha={alpha} lies below -1/n={-1.0 / n}")
    return alpha / (1.0 + n * alpha)


def _is_critical(alpha: float, n: int) -> bool:
    return abs(alpha + 1.0 / n) <= 1e-14


@dataclass(frozen=True)
class ExponentBundle:
    """The constants tied to one exponent: alpha, m = 2 alpha + 1, d, alpha'."""

    alpha: float
    m: float
    n: int
    d: float
    alpha_prime: float

    @property
    def supercritical(self) -> bool:
        return self.d > 0


def make_bundle(alpha, n: int) -> ExponentBundle:
    alpha = as_exponent(alpha)
    if n < 1:
        raise ValueError("dimension must be a positive integer")
    if alpha != math.inf and alpha < -1.0 / n and not _is_critical(alpha, n):
        raise ValueError(f"alpha={alpha} < -1/n is outside the admissible range")
    if alpha == math.inf:
        return ExponentBundle(alpha, math.inf, n, math.inf, 1.0 / n)
    if _is_critical(alpha, n):
        alpha = -1.0 / n
        return ExponentBundle(alpha, 2 * alpha + 1, n, 0.0, -math.inf)
    m = 2 * alpha + 1
    d = 2 * (n * alpha + 1)
    return ExponentBundle(alpha, m, n, d, dual_exponent(alpha, n))


def bundle_from_m(m: float, n: int) -> ExponentBundle:
    return make_bundle((m - 1) / 2, n)


class ShiftBound(NamedTuple):
    lower: float
    upper: float
    difference: float

    @property
    def holds(self) -> bool:
        slack = 1e-12 * max(1.0, abs(self.upper))
        return self.lower - slack <= self.difference <= self.upper + slack


def mean_shift_bound(a: float, b: float, lam: float, alpha: float, s: float) -> ShiftBound:
    """Bracket ``M(a+s, b+s) - M(a, b)`` between ``s`` and ``s min(1-lam, lam)^(1/alpha)``.

    Valid for alpha < 0 only.
    """
    alpha = as_exponent(alpha)
    if not alpha < 0:
        raise ValueError("the shift bound is available for negative alpha only")
    if s <= 0:
        raise ValueError("shift s must be positive")
    upper_factor = 1.0 if alpha == -math.inf else min(1.0 - lam, lam) ** (1.0 / alpha)
    diff = power_mean(a + s, b + s, lam, alpha) - power_mean(a, b, lam, alpha)
    return ShiftBound(s, s * upper_factor, diff)
