"""Supremal (Minkowski) convolution of grid functions under a power mean.

The search is brute force in index space.  For an output node ``i`` and a
tuple of free nodes ``j_1 .. j_{k-1}`` the last point is solved from
``i = sum w_l j_l`` and its value read off by (multi)linear interpolation,
with exact node lookup whenever the solved index is within 1e-9 of an
integer.  Values outside the box are zero.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .gridfn import Grid, GridFn
from .means import as_exponent, weighted_mean

__all__ = [
    "ConvolutionResult",
    "HypothesisReport",
    "check_hypothesis",
    "minimal_h",
    "minkowski_convolve",
    "minkowski_convolve_k",
]

SNAP = 1e-9
CHUNK = 1 << 21


@dataclass(frozen=True, eq=False)
class ConvolutionResult:
    """``ubar`` plus the optimal points and an attained flag per output node.

    ``points`` has shape ``grid.shape + (k, n)``: the coordinates of the
    ``k`` arguments realizing the supremum at each node.
    """

    ubar: GridFn
    points: np.ndarray
    attained: np.ndarray

    @property
    def y_star(self) -> np.ndarray:
        return self.points[..., 0, :]

    @property
    def z_star(self) -> np.ndarray:
        return self.points[..., -1, :]

    def to_csv(self, path) -> None:
        grid = self.ubar.grid
        coords = [c.ravel() for c in grid.coords()]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if grid.n == 1:
                w.writerow(["x", "ubar", "y_star", "z_star", "attained"])
            else:
                w.writerow(["x", "y", "ubar", "y_star_1", "y_star_2", "z_star_1", "z_star_2", "attained"])
            ys = self.y_star.reshape(-1, grid.n)
            zs = self.z_star.reshape(-1, grid.n)
            for p, val in enumerate(self.ubar.values.ravel()):
                row = [c[p] for c in coords] + [val] + list(ys[p]) + list(zs[p])
                w.writerow(["%.17g" % v for v in row] + [int(self.attained.ravel()[p])])


def _check_common_grid(us: Sequence[GridFn]) -> Grid:
    grid = us[0].grid
    for u in us[1:]:
        if u.grid != grid:
            raise ValueError("all functions must share one grid")
    return grid


def _interp(values: np.ndarray, zidx: np.ndarray) -> np.ndarray:
    """Multilinear lookup at fractional indices ``zidx`` (last axis = dimension)."""
    N = values.shape[0]
    n = values.ndim
    near = np.rint(zidx)
    z = np.where(np.abs(zidx - near) <= SNAP, near, zidx)
    lo = np.floor(z).astype(np.int64)
    frac = z - lo
    out = np.zeros(z.shape[:-1])
    for corner in itertools.product((0, 1), repeat=n):
        idx = lo + np.array(corner)
        wt = np.ones(z.shape[:-1])
        for d, c in enumerate(corner):
            wt = wt * (frac[..., d] if c else 1.0 - frac[..., d])
        inside = np.all((idx >= 0) & (idx <= N - 1), axis=-1) & (wt > 0)
        safe = np.where(inside[..., None], idx, 0)
        vals = values[tuple(safe[..., d] for d in range(n))]
        out = out + np.where(inside, wt * vals, 0.0)
    return out


def _core(us: Sequence[GridFn], geom_w, mean_w, alpha: float) -> ConvolutionResult:
    grid = _check_common_grid(us)
    n, N, k = grid.n, grid.N, len(us)
    geom_w = np.asarray(geom_w, dtype=float)
    if geom_w[-1] <= 0:
        raise ValueError("the last geometric weight must be positive")

    # all tuples of free node indices, shape (C, k-1, n)
    node_idx = np.array(list(np.ndindex(*grid.shape)), dtype=np.int64).reshape(-1, n)
    free = np.stack(np.meshgrid(*([np.arange(len(node_idx))] * (k - 1)), indexing="ij"), axis=-1)
    free = node_idx[free.reshape(-1, k - 1)]
    C = free.shape[0]
    partial = np.einsum("l,cld->cd", geom_w[:-1], free.astype(float))
    free_vals = np.stack([us[l].values[tuple(free[:, l, d] for d in range(n))] for l in range(k - 1)])
    # tie-break key: squared index distance first, then flat position of the free tuple
    flat_pos = np.arange(C)

    out_vals = np.empty(len(node_idx))
    out_pts = np.empty((len(node_idx), k, n))
    attained = np.empty(len(node_idx), dtype=bool)
    rows = max(1, CHUNK // max(C, 1))
    for start in range(0, len(node_idx), rows):
        I = node_idx[start:start + rows].astype(float)  # (B, n)
        zidx = (I[:, None, :] - partial[None, :, :]) / geom_w[-1]  # (B, C, n)
        last = _interp(us[-1].values, zidx)
        stack = np.concatenate([np.broadcast_to(free_vals[:, None, :], (k - 1,) + last.shape), last[None]])
        M = weighted_mean(stack, mean_w, alpha)
        dist2 = np.sum((free[None, :, :, :] - I[:, None, None, :]) ** 2, axis=(2, 3))
        best = M.max(axis=1)
        key = np.where(M == best[:, None], dist2 * C + flat_pos[None, :], np.inf)
        arg = np.argmin(key, axis=1)
        b = np.arange(len(I))
        out_vals[start:start + len(I)] = best
        zb = zidx[b, arg]
        zb = np.where(np.abs(zb - np.rint(zb)) <= SNAP, np.rint(zb), zb)
        fb = free[arg]
        out_pts[start:start + len(I), :-1, :] = -grid.L + grid.h * fb
        out_pts[start:start + len(I), -1, :] = -grid.L + grid.h * zb
        on_edge = np.any((fb == 0) | (fb == N - 1), axis=(1, 2)) | np.any((zb <= 0) | (zb >= N - 1), axis=1)
        attained[start:start + len(I)] = ~on_edge
    ubar = GridFn(grid, out_vals.reshape(grid.shape))
    return ConvolutionResult(ubar, out_pts.reshape(grid.shape + (k, n)), attained.reshape(grid.shape))


def minkowski_convolve_k(us: Sequence[GridFn], w, alpha, mean_weight=None) -> ConvolutionResult:
    """k-ary supremal convolution ``sup { M_alpha(u_l(y_l); w) : sum w_l y_l = x }``.

    ``mean_weight`` (default ``w``) lets the mean use weights different from
    the geometric splitting, as needed after exponent reduction.
    """
    if len(us) < 2:
        raise ValueError("need at least two functions")
    w = np.asarray(w, dtype=float)
    if w.size != len(us) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be a probability vector matching the functions")
    mw = w if mean_weight is None else np.asarray(mean_weight, dtype=float)
    return _core(us, w, mw, as_exponent(alpha))


def minkowski_convolve(u0: GridFn, u1: GridFn, lam: float, alpha, mean_weight: Optional[float] = None) -> ConvolutionResult:
    """Binary supremal convolution with splitting ``x = (1 - lam) y + lam z``."""
    if not 0 < lam < 1:
        raise ValueError(f"lam must lie in (0, 1), got {lam}")
    mw = None if mean_weight is None else (1.0 - mean_weight, mean_weight)
    return minkowski_convolve_k([u0, u1], (1.0 - lam, lam), alpha, mean_weight=mw)


class HypothesisReport(NamedTuple):
    passed: bool
    worst_violation: float
    witness: Optional[tuple]  # (y, z, x)
    convolution: ConvolutionResult


def check_hypothesis(f: GridFn, g: GridFn, h: GridFn, lam: float, alpha, tol: float = 0.0,
                     mean_weight: Optional[float] = None) -> HypothesisReport:
    """Test ``h(x) >= ubar(x) - tol`` at every node, ``ubar`` the convolution of ``f`` and ``g``."""
    _check_common_grid([f, g, h])
    res = minkowski_convolve(f, g, lam, alpha, mean_weight=mean_weight)
    viol = res.ubar.values - h.values
    idx = np.unravel_index(int(np.argmax(viol)), viol.shape)
    worst = float(viol[idx])
    x = tuple(c[idx] for c in h.grid.coords())
    witness = (tuple(res.y_star[idx]), tuple(res.z_star[idx]), x)
    return HypothesisReport(worst <= tol, worst, witness, res)


def minimal_h(f: GridFn, g: GridFn, lam: float, alpha) -> GridFn:
    """Pointwise smallest admissible ``h``: the convolution itself."""
    return minkowski_convolve(f, g, lam, alpha).ubar
