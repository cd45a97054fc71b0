"""Nonnegative functions sampled on symmetric uniform grids in one or two dimensions."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import integrate, ndimage

from .means import as_exponent, weighted_mean

__all__ = [
    "Grid",
    "GridFn",
    "ConcavityReport",
    "bump",
    "cap",
    "check_alpha_concavity",
    "from_csv",
    "gaussian",
    "indicator",
    "j_crossover_radius",
    "j_formula",
    "k_crossover_radius",
    "k_formula",
    "mass",
    "mollifier_constant",
    "mollify",
    "mollify_values",
    "to_csv",
    "truncate_J",
    "truncate_K",
    "two_bumps",
]


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``[-L, L]^n`` with ``N`` (odd) nodes per axis."""

    n: int
    L: float
    N: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("only dimensions 1 and 2 are supported")
        if self.N < 3 or self.N % 2 == 0:
            raise ValueError(f"N must be odd and at least 3, got {self.N}")
        if not self.L > 0:
            raise ValueError("half width L must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.N - 1)

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n

    @property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    @property
    def center(self) -> int:
        return (self.N - 1) // 2

    def coords(self) -> tuple:
        """Node coordinates, one array per axis, each of shape ``self.shape``."""
        if self.n == 1:
            return (self.axis,)
        return tuple(np.meshgrid(self.axis, self.axis, indexing="ij"))

    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c**2 for c in self.coords()))

    def sample(self, func: Callable) -> np.ndarray:
        return np.asarray(func(*self.coords()), dtype=float) * np.ones(self.shape)

    def dilate(self, s: float) -> "Grid":
        """Same node count, half width scaled by ``s``."""
        return Grid(self.n, self.L * s, self.N)

    def refine(self) -> "Grid":
        return Grid(self.n, self.L, 2 * self.N - 1)


@dataclass(frozen=True, eq=False)
class GridFn:
    """Nonnegative samples on a ``Grid``.

    ``values`` has the grid's shape (row-major in 2D).  ``tail_exponent``
    records a known power-law decay ``|x|^tail_exponent`` beyond the box.
    """

    grid: Grid
    values: np.ndarray
    tail_exponent: Optional[float] = field(default=None)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("GridFn values must be finite")
        if np.any(vals < 0):
            raise ValueError("GridFn values must be nonnegative")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, func: Callable, tail_exponent=None) -> "GridFn":
        return cls(grid, grid.sample(func), tail_exponent)

    def with_values(self, values, tail_exponent=None) -> "GridFn":
        return GridFn(self.grid, values, tail_exponent)

    def mass(self) -> float:
        return mass(self)

    def max(self) -> float:
        return float(self.values.max())

    def at_origin(self) -> float:
        return float(self.values[(self.grid.center,) * self.grid.n])

    def __mul__(self, c: float) -> "GridFn":
        return GridFn(self.grid, self.values * float(c), self.tail_exponent)

    __rmul__ = __mul__


def mass(f: GridFn) -> float:
    """Trapezoidal integral over the box."""
    out = f.values
    for _ in range(f.grid.n):
        out = integrate.trapezoid(out, dx=f.grid.h, axis=0)
    return float(out)


# -- mollification -----------------------------------------------------------


def _bump_profile(r2):
    r2 = np.asarray(r2, dtype=float)
    inside = r2 < 1.0
    out = np.zeros_like(r2)
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@lru_cache(maxsize=None)
def mollifier_constant(n: int) -> float:
    """``c_n`` making ``c_n exp(-1/(1-|x|^2))`` a unit-mass kernel on the unit ball."""
    if n == 1:
        val, _ = integrate.quad(lambda r: math.exp(-1.0 / (1.0 - r * r)), -1.0, 1.0,
                                epsabs=1e-14, epsrel=1e-14)
    elif n == 2:
        val, _ = integrate.quad(lambda r: 2 * math.pi * r * math.exp(-1.0 / (1.0 - r * r)),
                                0.0, 1.0, epsabs=1e-14, epsrel=1e-14)
    else:
        raise ValueError("only dimensions 1 and 2 are supported")
    return 1.0 / val


def _kernel(grid: Grid, eps: float) -> np.ndarray:
    r = int(math.floor(eps / grid.h))
    offs = grid.h * np.arange(-r, r + 1)
    if grid.n == 1:
        r2 = (offs / eps) ** 2
    else:
        X, Y = np.meshgrid(offs, offs, indexing="ij")
        r2 = (X**2 + Y**2) / eps**2
    k = _bump_profile(r2)
    if k.sum() == 0.0:
        k = np.zeros_like(k)
        k[(r,) * grid.n] = 1.0
    return k / k.sum()


def _padded_coords(grid: Grid, r: int) -> tuple:
    ax = -grid.L + grid.h * np.arange(-r, grid.N + r)
    if grid.n == 1:
        return (ax,)
    return tuple(np.meshgrid(ax, ax, indexing="ij"))


def mollify_values(grid: Grid, values: np.ndarray, eps: float, extension: Optional[Callable] = None) -> np.ndarray:
    """Kernel smoothing of a raw (possibly signed) array on ``grid``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    k = _kernel(grid, eps)
    r = (k.shape[0] - 1) // 2
    values = np.asarray(values, dtype=float).reshape(grid.shape)
    if extension is None:
        return ndimage.convolve(values, k, mode="constant", cval=0.0)
    padded = np.array(np.broadcast_to(extension(*_padded_coords(grid, r)), (grid.N + 2 * r,) * grid.n),
                      dtype=float)
    inner = (slice(r, r + grid.N),) * grid.n
    padded[inner] = values
    return ndimage.convolve(padded, k, mode="constant", cval=0.0)[inner]


def mollify(f: GridFn, eps: float, extension: Optional[Callable] = None) -> GridFn:
    """Convolve with the discrete bump kernel of radius ``eps``.

    Values outside the box are zero unless ``extension`` is given, in which
    case it is evaluated at the padded node coordinates.  The kernel is
    normalized to sum one, so constants are reproduced exactly.
    """
    return GridFn(f.grid, np.maximum(mollify_values(f.grid, f.values, eps, extension), 0.0))


def cap(f: GridFn, ell: float) -> GridFn:
    if not ell > 0:
        raise ValueError("cap level must be positive")
    return GridFn(f.grid, np.minimum(f.values, ell), f.tail_exponent)


# -- truncation operators ----------------------------------------------------


def j_formula(values, r, delta, c, alpha, beta):
    """Pointwise ``min(f + c delta, delta^beta (1 + r)^(1/alpha))``."""
    return np.minimum(np.asarray(values) + c * delta, delta**beta * (1.0 + np.asarray(r)) ** (1.0 / alpha))


def j_crossover_radius(delta: float, alpha: float, beta: float, c: float = 1.0) -> float:
    """Radius beyond which ``J`` equals its power-law tail when ``f`` vanishes there."""
    return c**alpha * delta ** (alpha * (1.0 - beta)) - 1.0


def truncate_J(f: GridFn, delta: float, c: float, alpha: float, beta: float) -> GridFn:
    n = f.grid.n
    if not delta > 0:
        raise ValueError("delta must be positive")
    if c < 1:
        raise ValueError("c must be at least 1")
    if not -1.0 / n < alpha < 0:
        raise ValueError(f"alpha must lie in (-1/n, 0), got {alpha}")
    if not beta < 0:
        raise ValueError("beta must be negative")
    if not 1.0 + n * alpha * (1.0 - beta) > 0:
        raise ValueError("need 1 + n alpha (1 - beta) > 0")
    vals = j_formula(f.values, f.grid.radius(), delta, c, alpha, beta)
    return GridFn(f.grid, vals, tail_exponent=1.0 / alpha)


def k_formula(values, r, delta, gamma, c, beta):
    """Pointwise ``min(max(f, c delta^gamma), delta^beta exp(-r))``."""
    return np.minimum(np.maximum(values, c * delta**gamma), delta**beta * np.exp(-np.asarray(r)))


def k_crossover_radius(delta: float, gamma: float, beta: float, c: float = 1.0) -> float:
    return (beta - gamma) * math.log(delta) - math.log(c)


def truncate_K(f: GridFn, delta: float, gamma: float, c: float, beta: float) -> GridFn:
    """Floor at ``c delta^gamma`` and cut down to the exponential envelope.

    The exponential tail is not a power law, so ``tail_exponent`` is cleared.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    if c < 1:
        raise ValueError("c must be at least 1")
    if not -gamma < beta < 0:
        raise ValueError(f"beta must lie in (-gamma, 0), got {beta}")
    return GridFn(f.grid, k_formula(f.values, f.grid.radius(), delta, gamma, c, beta))


# -- concavity ---------------------------------------------------------------


class ConcavityReport(NamedTuple):
    passed: bool
    worst_violation: float
    witness: Optional[tuple]  # (y, z, midpoint) coordinates


def _midpoint_pairs_1d(N: int):
    j, k = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    keep = ((j + k) % 2 == 0) & (j < k)
    return j[keep], k[keep]


def check_alpha_concavity(f: GridFn, alpha, tol: float = 0.0) -> ConcavityReport:
    """Exhaustive midpoint test over node pairs whose midpoint is a node."""
    alpha = as_exponent(alpha)
    vals = f.values
    grid = f.grid
    if grid.n == 1:
        j, k = _midpoint_pairs_1d(grid.N)
        a, b, mid = vals[j], vals[k], vals[(j + k) // 2]
        M = weighted_mean(np.stack([a, b]), (0.5, 0.5), alpha)
        viol = M - mid
        idx = int(np.argmax(viol))
        worst = float(viol[idx])
        ax = grid.axis
        witness = (ax[j[idx]], ax[k[idx]], ax[(j[idx] + k[idx]) // 2])
    else:
        worst, witness = -math.inf, None
        ax = grid.axis
        flat = vals.ravel()
        I, J = np.meshgrid(np.arange(grid.N), np.arange(grid.N), indexing="ij")
        I, J = I.ravel(), J.ravel()
        for p in range(flat.size):
            q = np.arange(p + 1, flat.size)
            ok = ((I[p] + I[q]) % 2 == 0) & ((J[p] + J[q]) % 2 == 0)
            q = q[ok]
            if q.size == 0:
                continue
            mi, mj = (I[p] + I[q]) // 2, (J[p] + J[q]) // 2
            M = weighted_mean(np.stack([np.full(q.size, flat[p]), flat[q]]), (0.5, 0.5), alpha)
            viol = M - vals[mi, mj]
            t = int(np.argmax(viol))
            if viol[t] > worst:
                worst = float(viol[t])
                witness = ((ax[I[p]], ax[J[p]]), (ax[I[q[t]]], ax[J[q[t]]]), (ax[mi[t]], ax[mj[t]]))
    return ConcavityReport(worst <= tol, worst, witness)


# -- presets -----------------------------------------------------------------


def gaussian(grid: Grid, center=0.0, width=1.0, amplitude=1.0) -> GridFn:
    """``amplitude * exp(-|x - center|^2 / width^2)``."""
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.n,))
    r2 = sum((x - ci) ** 2 for x, ci in zip(grid.coords(), c))
    return GridFn(grid, amplitude * np.exp(-r2 / width**2))


def _interval_indicator(x, a, b):
    out = ((x > a) & (x < b)).astype(float)
    on_edge = np.isclose(x, a, rtol=0, atol=1e-9) | np.isclose(x, b, rtol=0, atol=1e-9)
    return np.where(on_edge, 0.5, out)


def indicator(grid: Grid, a=-1.0, b=1.0, level: float = 1.0, edge: str = "half") -> GridFn:
    """Indicator of ``[a, b]^n``.

    ``edge="half"`` puts 1/2 on nodes lying exactly on a jump, which makes the
    trapezoidal mass exact; ``edge="closed"`` uses the closed interval.
    """
    vals = np.ones(grid.shape)
    for x in grid.coords():
        if edge == "half":
            vals = vals * _interval_indicator(x, a, b)
        elif edge == "closed":
            vals = vals * ((x >= a - 1e-9) & (x <= b + 1e-9))
        else:
            raise ValueError(f"unknown edge convention {edge!r}")
    return GridFn(grid, level * vals)


def bump(grid: Grid, center=0.0, radius=1.0, amplitude: float = 1.0) -> GridFn:
    """Smooth compactly supported bump ``amplitude exp(-1/(1-|x-c|^2/R^2))``."""
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.n,))
    r2 = sum((x - ci) ** 2 for x, ci in zip(grid.coords(), c)) / radius**2
    return GridFn(grid, amplitude * math.e * _bump_profile(r2))


def two_bumps(grid: Grid, sep=3.0, radius=1.0, amplitude: float = 1.0) -> GridFn:
    """Two bumps centered at ``-sep/2`` and ``+sep/2`` on the first axis."""
    shift = np.zeros(grid.n)
    shift[0] = sep / 2.0
    left = bump(grid, -shift, radius, amplitude).values
    right = bump(grid, shift, radius, amplitude).values
    return GridFn(grid, left + right)


def to_csv(f: GridFn, path) -> None:
    names = ["x", "y"][: f.grid.n] + ["value"]
    cols = [c.ravel() for c in f.grid.coords()] + [f.values.ravel()]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow(["%.17g" % v for v in row])


def from_csv(path) -> GridFn:
    """Read a grid function written by ``to_csv``; the grid is inferred."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    n = len(header) - 1
    if n not in (1, 2):
        raise ValueError(f"unexpected CSV header {header}")
    N = int(round(len(body) ** (1.0 / n)))
    if N**n != len(body):
        raise ValueError("CSV row count is not a full grid")
    L = -float(body[0, 0])
    grid = Grid(n, L, N)
    expected = grid.coords()
    for i in range(n):
        if not np.allclose(body[:, i], expected[i].ravel(), rtol=0, atol=1e-12 * max(1.0, L)):
            raise ValueError("CSV coordinates do not form a symmetric uniform grid")
    return GridFn(grid, body[:, -1].reshape(grid.shape))
