"""Reference computations that share no code path with the package.

The enumeration oracle loops over node pairs in plain Python with exact
rational alignment.  Means are evaluated twice: once through the public
scalar ``power_mean`` (so that the supremum can be compared bit for bit)
and once through the textbook formula, which must agree to rounding.
"""
import math
from fractions import Fraction

import numpy as np
import sympy as sp

from bbllab.means import power_mean


def naive_mean(a: float, b: float, lam: float, alpha: float) -> float:
    if a == 0.0 or b == 0.0:
        return 0.0
    if alpha == math.inf:
        return max(a, b)
    if alpha == -math.inf:
        return min(a, b)
    if alpha == 0:
        return a ** (1 - lam) * b**lam
    return ((1 - lam) * a**alpha + lam * b**alpha) ** (1 / alpha)


def enumerate_convolution(u0: np.ndarray, u1: np.ndarray, lam: float, alpha: float, mean=power_mean):
    """``max`` over all node pairs ``(j, k)`` with ``(1-lam) j + lam k = i`` exactly."""
    N = len(u0)
    w = Fraction(lam).limit_denominator(1000)
    out = np.zeros(N)
    for i in range(N):
        best = 0.0
        for j in range(N):
            # k = (i - (1-w) j) / w must be an integer node
            k = (i - (1 - w) * j) / w
            if k.denominator != 1 or not 0 <= k < N:
                continue
            v = float(mean(float(u0[j]), float(u1[int(k)]), lam, alpha))
            best = max(best, v)
        out[i] = best
    return out


def barenblatt_integral(m, n: int) -> float:
    """``int_{R^n} (1 + |y|^2)^(-1/(1-m)) dy`` symbolically, in polar form."""
    r = sp.symbols("r", positive=True)
    p = 1 / (1 - sp.nsimplify(m))
    sphere = 2 * sp.pi ** sp.Rational(n, 2) / sp.gamma(sp.Rational(n, 2))
    val = sphere * sp.integrate(r ** (n - 1) * (1 + r**2) ** (-p), (r, 0, sp.oo))
    return float(sp.N(val, 30))


def heat_indicator_at_origin(t: float, a: float = -1.0, b: float = 1.0) -> float:
    """Heat flow of the indicator of ``[a, b]`` evaluated at ``x = 0``."""
    s = math.sqrt(4 * t)
    return 0.5 * (math.erf(b / s) - math.erf(a / s))
