"""Equality case of the logarithmic (geometric-mean) inequality.

An equality triple is evolved by the heat flow until all three solutions are
strongly log-concave.  The convex potentials ``W = -log u`` are then compared
through their discrete Legendre transforms: for a homothety
``u_1(x + eta) = k u_0(x)`` the conjugates differ by the affine function
``<eta, xi> + log k``.  Everything works on the grid; nothing is interpolated
inside the maxima.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from . import __version__
from .bbl import BBLTriple, EQUALITY_RTOL, verify_bbl
from .diffusion import Trajectory, heat_evolve, heat_trajectory
from .gridfn import Grid, GridFn, check_alpha_concavity

__all__ = [
    "ConcaveConjugatePair",
    "EqualityReport",
    "HomothetyFit",
    "MatrixDiagnostics",
    "default_dual_axes",
    "detect_strong_logconcavity",
    "equality_pipeline",
    "harmonic_mean_matrix",
    "legendre_transform",
    "log_hessians",
    "matrix_equality_diagnostics",
    "potential",
    "recover_homothety",
]

CUTOFF = 1e-12
CHUNK = 1 << 22


# -- potentials and finite-difference Hessians -----------------------------------


def potential(u: GridFn, cutoff: float = CUTOFF):
    """``W = -log u`` on the window ``u >= cutoff * max u``; ``nan`` elsewhere."""
    vals = u.values
    top = vals.max()
    if not top > 0:
        raise ValueError("the function vanishes identically")
    window = vals >= cutoff * top
    W = np.full(vals.shape, np.nan)
    W[window] = -np.log(vals[window])
    return W, window


def _erode(window: np.ndarray, steps: int = 1) -> np.ndarray:
    """Nodes whose full ``3^n`` neighbourhood lies in the window, iterated."""
    out = window.copy()
    for _ in range(steps):
        out = ndimage.binary_erosion(out, structure=np.ones((3,) * out.ndim), border_value=0)
    return out


def log_hessians(v: np.ndarray, h: float) -> np.ndarray:
    """Centered second differences of ``v``; shape ``v.shape + (n, n)``, ``nan`` on the rim."""
    n = v.ndim
    H = np.full(v.shape + (n, n), np.nan)
    inner = (slice(1, -1),) * n
    for a in range(n):
        plus = list(inner)
        minus = list(inner)
        plus[a] = slice(2, None)
        minus[a] = slice(None, -2)
        H[inner + (a, a)] = (v[tuple(plus)] - 2 * v[inner] + v[tuple(minus)]) / h**2
        for b in range(a + 1, n):
            def sh(da, db):
                s = list(inner)
                s[a] = slice(1 + da, v.shape[a] - 1 + da)
                s[b] = slice(1 + db, v.shape[b] - 1 + db)
                return v[tuple(s)]
            cross = (sh(1, 1) - sh(1, -1) - sh(-1, 1) + sh(-1, -1)) / (4 * h**2)
            H[inner + (a, b)] = cross
            H[inner + (b, a)] = cross
    return H


def _gradients(v: np.ndarray, h: float) -> np.ndarray:
    n = v.ndim
    G = np.full(v.shape + (n,), np.nan)
    inner = (slice(1, -1),) * n
    for a in range(n):
        plus = list(inner)
        minus = list(inner)
        plus[a] = slice(2, None)
        minus[a] = slice(None, -2)
        G[inner + (a,)] = (v[tuple(plus)] - v[tuple(minus)]) / (2 * h)
    return G


def _max_eigenvalue(H: np.ndarray) -> np.ndarray:
    if H.shape[-1] == 1:
        return H[..., 0, 0]
    a, b, c = H[..., 0, 0], H[..., 0, 1], H[..., 1, 1]
    return 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b**2)


# -- detection -----------------------------------------------------------------


def _line_convex(window: np.ndarray) -> bool:
    """Every axis-parallel line meets the window in one run of nodes."""
    for a in range(window.ndim):
        lines = np.moveaxis(window, a, -1).reshape(-1, window.shape[a]).astype(np.int8)
        starts = np.sum(np.diff(lines, axis=1) == 1, axis=1) + lines[:, 0]
        if np.any(starts > 1):
            return False
    return True


def _concavity_modulus(u: GridFn, cutoff: float) -> float:
    """``-max`` eigenvalue of the Hessian of ``log u`` over the eroded window.

    A window with gaps means ``log u`` drops to ``-inf`` between positive
    values, which is never concave.
    """
    W, window = potential(u, cutoff)
    inner = _erode(window)
    if not inner.any() or not _line_convex(window):
        return -math.inf
    H = log_hessians(np.where(window, -W, 0.0), u.grid.h)
    return float(-np.max(_max_eigenvalue(H[inner])))


def detect_strong_logconcavity(traj: Trajectory, sigma: float, cutoff: float = CUTOFF) -> Optional[float]:
    """First stored time at which every window Hessian of ``log u`` is ``<= -sigma``."""
    for t, state in zip(traj.times, traj.states):
        if _concavity_modulus(state, cutoff) >= sigma:
            return float(t)
    return None


# -- Legendre transform ----------------------------------------------------------


def _dual_axes(grid: Grid, dual) -> List[np.ndarray]:
    if isinstance(dual, Grid):
        if dual.n != grid.n:
            raise ValueError("dual grid dimension mismatch")
        return [dual.axis] * grid.n
    axes = [np.asarray(a, dtype=float) for a in dual]
    if len(axes) != grid.n:
        raise ValueError("need one dual axis per dimension")
    return axes


@dataclass(frozen=True, eq=False)
class ConcaveConjugatePair:
    """A convex potential on its window and the discrete transform on dual nodes.

    ``argmax`` holds the primal index maximizing ``<x, xi> - W(x)`` for each
    dual node; ``clamped`` marks maxima attained on the window's rim, where the
    discrete transform underestimates the continuous one.
    """

    grid: Grid
    W: np.ndarray
    window: np.ndarray
    dual_axes: tuple
    W_star: np.ndarray
    argmax: np.ndarray
    clamped: np.ndarray

    @property
    def dual_shape(self) -> tuple:
        return tuple(len(a) for a in self.dual_axes)

    def dual_coords(self) -> np.ndarray:
        mesh = np.meshgrid(*self.dual_axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def argmax_points(self) -> np.ndarray:
        return -self.grid.L + self.grid.h * self.argmax

    def double_conjugate(self) -> np.ndarray:
        """``max_xi <x, xi> - W*(xi)`` at the window nodes (``nan`` outside)."""
        xi = self.dual_coords().reshape(-1, self.grid.n)
        ws = self.W_star.ravel()
        pts = np.stack([c[self.window] for c in self.grid.coords()], axis=-1)
        out = np.full(self.W.shape, np.nan)
        out[self.window] = _chunked_max(pts, xi, ws)[0]
        return out

    def duality_defect(self) -> np.ndarray:
        """``W*''(xi) W''(x(xi)) - 1`` at interior unclamped dual nodes (1D)."""
        if self.grid.n != 1:
            raise NotImplementedError("the scalar duality check is one-dimensional")
        xi = self.dual_axes[0]
        dxi = np.diff(xi)
        if not np.allclose(dxi, dxi[0]):
            raise ValueError("the check needs a uniform dual axis")
        ws = self.W_star
        d2star = (ws[2:] - 2 * ws[1:-1] + ws[:-2]) / dxi[0] ** 2
        H = log_hessians(np.where(self.window, self.W, 0.0), self.grid.h)[..., 0, 0]
        inner = _erode(self.window)
        idx = self.argmax[1:-1, 0]
        ok = ~self.clamped[2:] & ~self.clamped[1:-1] & ~self.clamped[:-2] & inner[idx]
        return np.where(ok, d2star * H[idx] - 1.0, np.nan)


def _chunked_max(points: np.ndarray, duals: np.ndarray, values: np.ndarray):
    """For each row ``p`` of ``points``: max and argmax over ``j`` of ``<p, d_j> - values_j``."""
    best = np.empty(len(points))
    arg = np.empty(len(points), dtype=np.int64)
    rows = max(1, CHUNK // max(len(duals), 1))
    for s in range(0, len(points), rows):
        S = points[s:s + rows] @ duals.T - values[None, :]
        a = np.argmax(S, axis=1)
        arg[s:s + rows] = a
        best[s:s + rows] = S[np.arange(len(a)), a]
    return best, arg


def legendre_transform(grid: Grid, W: np.ndarray, window: np.ndarray, dual) -> ConcaveConjugatePair:
    """Exact discrete transform ``W*(xi) = max_{x in window} <x, xi> - W(x)``.

    ``dual`` is either a ``Grid`` or one array of dual coordinates per axis.
    """
    W = np.asarray(W, dtype=float).reshape(grid.shape)
    window = np.asarray(window, dtype=bool).reshape(grid.shape)
    if not window.any():
        raise ValueError("empty window")
    if not np.all(np.isfinite(W[window])):
        raise ValueError("W must be finite on the window")
    axes = _dual_axes(grid, dual)
    idx = np.argwhere(window)
    pts = -grid.L + grid.h * idx
    xi = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, grid.n)
    ws, arg = _chunked_max(xi, pts, W[window])
    shape = tuple(len(a) for a in axes)
    rim = window & ~_erode(window)
    argmax = idx[arg]
    clamped = rim[tuple(argmax.T)]
    return ConcaveConjugatePair(grid, np.where(window, W, np.nan), window, tuple(axes),
                                ws.reshape(shape), argmax.reshape(shape + (grid.n,)),
                                clamped.reshape(shape))


def _slope_box(u: GridFn, cutoff: float):
    W, window = potential(u, cutoff)
    inner = _erode(window)
    G = _gradients(np.where(window, W, 0.0), u.grid.h)[inner]
    if G.size == 0:
        raise ValueError("window too small for slopes")
    return G.min(axis=0), G.max(axis=0)


def default_dual_axes(us: Sequence[GridFn], cutoff: float = CUTOFF, shrink: float = 0.05,
                      nodes: Optional[int] = None) -> List[np.ndarray]:
    """Uniform dual axes spanning the slope range shared by all potentials."""
    boxes = [_slope_box(u, cutoff) for u in us]
    lo = np.max([b[0] for b in boxes], axis=0)
    hi = np.min([b[1] for b in boxes], axis=0)
    if np.any(hi <= lo):
        raise ValueError("dual windows are disjoint; the functions are not comparable")
    pad = shrink * (hi - lo)
    N = us[0].grid.N if nodes is None else nodes
    return [np.linspace(a, b, N) for a, b in zip(lo + pad, hi - pad)]


# -- homothety recovery ------------------------------------------------------------


class HomothetyFit(NamedTuple):
    """``u_1(x + eta) ~ k u_0(x)`` and ``u_lam(x + lam eta) ~ k^lam u_0(x)``."""

    k: float
    eta: np.ndarray
    fit_residual: float
    affine_residual: float
    identity_residual: float
    dual_nodes: int


def _log_interpolator(u: GridFn, cutoff: float):
    W, window = potential(u, cutoff)
    logu = np.where(window, -W, np.nan)
    axes = [u.grid.axis] * u.grid.n
    return RegularGridInterpolator(axes, logu, bounds_error=False, fill_value=np.nan)


def recover_homothety(u0: GridFn, u1: GridFn, ul: GridFn, lam: float, cutoff: float = CUTOFF,
                      dual=None) -> HomothetyFit:
    """Fit ``W_1* - W_0* = <eta, xi> + log k`` by least squares on the common dual window.

    The residual also includes the worst deviation of
    ``log u_lam(x + lam eta) - lam log k - log u_0(x)`` over the eroded
    window of ``u_0``.
    """
    if not 0 < lam < 1:
        raise ValueError("lam must lie in (0, 1)")
    grid = u0.grid
    if not (u1.grid == grid == ul.grid):
        raise ValueError("all functions must share one grid")
    axes = default_dual_axes([u0, u1, ul], cutoff) if dual is None else _dual_axes(grid, dual)
    pairs = []
    for u in (u0, u1):
        W, window = potential(u, cutoff)
        pairs.append(legendre_transform(grid, W, window, axes))
    ok = ~pairs[0].clamped & ~pairs[1].clamped
    if ok.sum() < grid.n + 1:
        raise ValueError("dual windows are disjoint; the functions are not comparable")
    xi = pairs[0].dual_coords()[ok]
    diff = (pairs[1].W_star - pairs[0].W_star)[ok]
    X = np.column_stack([xi, np.ones(len(xi))])
    coef, *_ = np.linalg.lstsq(X, diff, rcond=None)
    eta, b = coef[:-1], float(coef[-1])
    affine = float(np.max(np.abs(X @ coef - diff)))

    W0, w0 = potential(u0, cutoff)
    inner = _erode(w0, 2)
    pts = np.stack([c[inner] for c in grid.coords()], axis=-1)
    shifted = _log_interpolator(ul, cutoff)(pts + lam * eta)
    dev = shifted - lam * b + W0[inner]
    # compare only where the shifted point stays inside the window of u_lam
    dev = dev[np.isfinite(dev)]
    identity = float(np.max(np.abs(dev))) if dev.size else math.inf
    return HomothetyFit(math.exp(b), eta, max(affine, identity), affine, identity, int(ok.sum()))


# -- matrix diagnostics -------------------------------------------------------------


def harmonic_mean_matrix(X1, X2, lam: float) -> np.ndarray:
    """``((1 - lam) X1^-1 + lam X2^-1)^-1`` for negative definite inputs."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    return np.linalg.inv((1 - lam) * np.linalg.inv(X1) + lam * np.linalg.inv(X2))


@dataclass(frozen=True, eq=False)
class MatrixDiagnostics:
    """Per-point Hessian comparison at gradient-matched triples ``(x_1, x_2, x_*)``.

    ``margin`` is the smallest eigenvalue of ``Y - H`` with ``H`` the harmonic
    mean of ``X_1, X_2``; ``trace_gap`` is ``tr H - (1-lam) tr X_1 - lam tr X_2``,
    which is nonnegative and vanishes only when ``X_1 = X_2``.
    """

    x_star: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    Y: np.ndarray
    margin: np.ndarray
    trace_gap: np.ndarray
    rigidity: np.ndarray
    skipped: int

    def to_csv(self, path) -> None:
        n = self.x_star.shape[1] if self.x_star.size else 1
        names = ["x_star", "x1", "x2"] if n == 1 else \
            ["x_star_1", "x_star_2", "x1_1", "x1_2", "x2_1", "x2_2"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names + ["margin", "trace_gap", "rigidity"])
            for p in range(len(self.margin)):
                row = list(self.x_star[p]) + list(self.x1[p]) + list(self.x2[p])
                row += [self.margin[p], self.trace_gap[p], self.rigidity[p]]
                w.writerow(["%.17g" % v for v in row])


def matrix_equality_diagnostics(u0: GridFn, u1: GridFn, ul: GridFn, lam: float, points,
                                cutoff: float = CUTOFF) -> MatrixDiagnostics:
    """Match gradients of ``log u`` through the conjugate argmax and compare Hessians.

    For each sample ``x_*`` (snapped to the nearest node) the common gradient
    is read off ``log u_lam``; ``x_1``, ``x_2`` are the primal maximizers of
    the transforms of ``-log u_0``, ``-log u_1`` at that slope.  Points whose
    match is clamped or lies within ``2h`` of a window edge are skipped.
    """
    grid = u0.grid
    h = grid.h
    pts = np.asarray(points, dtype=float).reshape(-1, grid.n)
    data = [potential(u, cutoff) for u in (u0, u1, ul)]
    inner = [_erode(w, 2) for _, w in data]
    hess = [-log_hessians(np.where(w, W, 0.0), h) for W, w in data]
    grad_l = -_gradients(np.where(data[2][1], data[2][0], 0.0), h)

    rows = {k: [] for k in ("xs", "x1", "x2", "X1", "X2", "Y", "margin", "gap", "rig")}
    skipped = 0
    for p in pts:
        node = np.clip(np.rint((p + grid.L) / h).astype(int), 0, grid.N - 1)
        ti = tuple(node)
        if not inner[2][ti]:
            skipped += 1
            continue
        slope = -grad_l[ti]  # gradient of W_lam
        matched = []
        for W, w in data[:2]:
            pair = legendre_transform(grid, W, w, [np.array([s]) for s in slope])
            matched.append((tuple(pair.argmax.reshape(-1, grid.n)[0]), bool(pair.clamped.ravel()[0])))
        if any(c or not inn[m] for (m, c), inn in zip(matched, inner[:2])):
            skipped += 1
            continue
        (m1, _), (m2, _) = matched
        X1, X2, Y = hess[0][m1], hess[1][m2], hess[2][ti]
        H = harmonic_mean_matrix(X1, X2, lam)
        rows["xs"].append(-grid.L + h * node)
        rows["x1"].append(-grid.L + h * np.array(m1))
        rows["x2"].append(-grid.L + h * np.array(m2))
        rows["X1"].append(X1)
        rows["X2"].append(X2)
        rows["Y"].append(Y)
        rows["margin"].append(float(np.min(np.linalg.eigvalsh(Y - H))))
        rows["gap"].append(float(np.trace(H) - (1 - lam) * np.trace(X1) - lam * np.trace(X2)))
        rows["rig"].append(float(np.linalg.norm(X1 - X2, 2)))
    n = grid.n

    def arr(key, tail):
        return np.array(rows[key]).reshape((-1,) + tail)

    return MatrixDiagnostics(arr("xs", (n,)), arr("x1", (n,)), arr("x2", (n,)), arr("X1", (n, n)),
                             arr("X2", (n, n)), arr("Y", (n, n)), arr("margin", ()), arr("gap", ()),
                             arr("rig", ()), skipped)


# -- pipeline ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EqualityReport:
    t_star: Optional[float]
    sigma: float
    k: float
    eta: np.ndarray
    fit_residual: float
    certified: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": __version__,
            "t_star": self.t_star,
            "sigma": self.sigma,
            "k": self.k,
            "eta": [float(e) for e in np.atleast_1d(self.eta)],
            "fit_residual": self.fit_residual,
            "certified": self.certified,
            "details": self.details,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _shifted(u: GridFn, shift: np.ndarray) -> np.ndarray:
    """``u(x - shift)`` at the nodes, zero outside the box."""
    grid = u.grid
    interp = RegularGridInterpolator([grid.axis] * grid.n, u.values, bounds_error=False, fill_value=0.0)
    pts = np.stack([c.ravel() for c in grid.coords()], axis=-1) - shift
    return interp(pts).reshape(grid.shape)


def _time_zero_defect(triple: BBLTriple, k: float, eta: np.ndarray) -> float:
    """Relative sup-norm defect of ``g = k f(. - eta)`` and ``h = k^lam f(. - lam eta)``."""
    f, g, h, lam = triple.f, triple.g, triple.h, triple.lam
    dg = np.max(np.abs(g.values - k * _shifted(f, eta))) / g.max()
    dh = np.max(np.abs(h.values - k**lam * _shifted(f, lam * eta))) / h.max()
    return float(max(dg, dh))


def equality_pipeline(triple: BBLTriple, sigma: float = 1e-3, times: Optional[Sequence[float]] = None,
                      tol: float = 1e-2, t0_tol: float = 2e-2, equality_rtol: float = EQUALITY_RTOL,
                      concavity_rtol: float = 1e-9, cutoff: float = CUTOFF) -> EqualityReport:
    """Detect, evolve, fit and certify the homothety structure of an equality triple.

    Raises ``ValueError`` when the triple is not near equality or the
    exponent is not zero.
    """
    if triple.alpha != 0:
        raise ValueError("the equality pipeline handles the geometric mean only")
    report = verify_bbl(triple, equality_rtol=equality_rtol, hyp_tol=1e-12 * triple.h.max())
    if not report.near_equality:
        raise ValueError(f"not a near-equality triple (relative slack {report.relative_slack:.3g})")
    times = np.geomspace(1e-2, 10.0, 16) if times is None else np.asarray(times, dtype=float)
    funcs = (triple.f, triple.g, triple.h)
    t_star = None
    for t in times:
        states = [heat_evolve(u, float(t)) for u in funcs]
        if all(_concavity_modulus(s, cutoff) >= sigma for s in states):
            t_star = float(t)
            break
    details = {"lhs": report.lhs, "rhs": report.rhs, "hypothesis_pass": bool(report.hypothesis.passed)}
    if t_star is None:
        return EqualityReport(None, sigma, math.nan, np.full(triple.f.grid.n, np.nan), math.inf, False, details)
    # Heat flow keeps the Hessian of -log u below I/(2t), so grid maxima and
    # linear interpolation of log u are off by at most h^2/(16 t).  Fit once
    # that bound is a tenth of the tolerance.
    h = triple.f.grid.h
    t_fit = max(t_star, h**2 / (1.6 * tol))
    later = times[times >= t_fit]
    t_fit = float(later[0]) if later.size else t_fit
    if t_fit != t_star:
        states = [heat_evolve(u, t_fit) for u in funcs]
    details["t_fit"] = t_fit
    fit = recover_homothety(states[0], states[1], states[2], triple.lam, cutoff)
    defect = _time_zero_defect(triple, fit.k, fit.eta)
    conc = [check_alpha_concavity(u, 0.0, concavity_rtol * u.max()) for u in funcs]
    certified = bool(fit.fit_residual <= tol and defect <= t0_tol and all(c.passed for c in conc))
    details.update({
        "affine_residual": fit.affine_residual,
        "identity_residual": fit.identity_residual,
        "dual_nodes": fit.dual_nodes,
        "time_zero_defect": defect,
        "log_concave": [bool(c.passed) for c in conc],
    })
    return EqualityReport(t_star, sigma, fit.k, fit.eta, fit.fit_residual, certified, details)
