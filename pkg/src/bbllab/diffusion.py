"""Heat-kernel evolution and implicit solvers for ``u_t = (1/m) Lap(u^m)``.

The nonlinear solver is backward Euler in time with a Newton iteration on the
potential ``p = u^m / m`` (``p = u`` when ``m = 1``), so the equation reads
``u_t = Lap p`` and the Jacobian ``diag(u^(1-m)) - dt A`` stays bounded as
``u -> 0``.  Boundary models:

``neumann``
    Zero flux with half cells at the box faces.  The trapezoidal mass is
    conserved to the Newton tolerance.
``dirichlet``
    Fixed value ``delta`` (zero for the pure problem) on the box boundary.
``frozen``
    Boundary values held at the initial data.
``farfield``
    Boundary values prescribed by a callable ``g(t, boundary_coords)``,
    e.g. an exact self-similar profile.
``superfast``
    One-dimensional power-law tail: ``u(L,t)^(1-m) = phi(L)^(1-m) + 2(1+m)t/((1-m)L^2)``.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from .gridfn import Grid, GridFn, mass
from .means import ExponentBundle, bundle_from_m

__all__ = [
    "DiffusionProblem",
    "ResidualField",
    "SolverError",
    "StepPolicy",
    "Trajectory",
    "comparison_check",
    "dirichlet_extinction_time",
    "heat_evolve",
    "heat_trajectory",
    "make_problem",
    "pme_evolve",
    "residual",
    "subsolution_check",
    "superfast_evolve",
    "trajectory_from_function",
]

FLOOR = 1e-300
NEWTON_TOL = 1e-10
NEWTON_MAXIT = 50


class SolverError(RuntimeError):
    """Newton failed even after step-size reduction."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# -- heat kernel ---------------------------------------------------------------


def _trap_weights(N: int) -> np.ndarray:
    w = np.ones(N)
    w[0] = w[-1] = 0.5
    return w


def _heat_matrix(grid: Grid, t: float) -> np.ndarray:
    x = grid.axis
    h = grid.h
    diff = x[:, None] - x[None, :]
    K = np.exp(-diff**2 / (4.0 * t)) / math.sqrt(4.0 * math.pi * t)
    # lattice normalization: exactly 1 for resolved kernels, fixes t << h^2
    kmax = int(math.ceil(12.0 * math.sqrt(t) / h)) + 1
    offs = h * np.arange(-kmax, kmax + 1)
    lattice = h * np.sum(np.exp(-offs**2 / (4.0 * t))) / math.sqrt(4.0 * math.pi * t)
    return K * (h * _trap_weights(grid.N))[None, :] / lattice


def heat_evolve(phi: GridFn, t: float) -> GridFn:
    """Whole-space heat flow by kernel quadrature over the box.

    Data outside the box is taken to be zero, so the error against the true
    solution is at most ``(4 pi t)^(-n/2)`` times the mass of ``phi`` lying
    outside the box.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    if t == 0:
        return GridFn(phi.grid, phi.values)
    K = _heat_matrix(phi.grid, t)
    if phi.grid.n == 1:
        out = K @ phi.values
    else:
        out = K @ phi.values @ K.T
    return GridFn(phi.grid, np.maximum(out, 0.0))


# -- containers ----------------------------------------------------------------


@dataclass(frozen=True)
class DiffusionProblem:
    bundle: ExponentBundle
    domain_kind: str
    initial: GridFn
    delta: float = 0.0
    boundary: Optional[str] = None
    farfield: Optional[Callable] = None

    def __post_init__(self):
        m = self.bundle.m
        if self.domain_kind not in ("cauchy_box", "dirichlet_box"):
            raise ValueError(f"unknown domain kind {self.domain_kind!r}")
        if not -1 < m <= 1:
            raise ValueError(f"m={m} outside (-1, 1]")
        if self.domain_kind == "cauchy_box" and not self.bundle.d > 0:
            raise ValueError("the Cauchy problem needs a supercritical exponent")
        if self.bundle.n != self.initial.grid.n:
            raise ValueError("bundle dimension differs from grid dimension")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.domain_kind == "dirichlet_box":
            edge = _boundary_mask(self.initial.grid)
            if np.any(self.initial.values[edge] > self.delta + 1e-12):
                raise ValueError("initial data exceeds the boundary value delta")
        if self.boundary_model == "farfield" and self.farfield is None:
            raise ValueError("farfield boundary needs a callable")

    @property
    def m(self) -> float:
        return self.bundle.m

    @property
    def boundary_model(self) -> str:
        if self.boundary is not None:
            return self.boundary
        return "neumann" if self.domain_kind == "cauchy_box" else "dirichlet"


def make_problem(initial: GridFn, m: float, domain_kind: str = "cauchy_box", **kw) -> DiffusionProblem:
    return DiffusionProblem(bundle_from_m(m, initial.grid.n), domain_kind, initial, **kw)


@dataclass
class Trajectory:
    """Stored states of one evolution; ``times[0] = 0`` is the initial data."""

    times: np.ndarray
    states: List[GridFn]
    m: float
    problem: Optional[DiffusionProblem] = None
    extinction_time: Optional[float] = None
    boundary_model: str = ""
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def grid(self) -> Grid:
        return self.states[0].grid

    @property
    def masses(self) -> np.ndarray:
        return np.array([mass(s) for s in self.states])

    def state_at(self, t: float) -> GridFn:
        idx = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[idx], t, rel_tol=1e-12, abs_tol=1e-14):
            raise KeyError(f"time {t} is not stored")
        return self.states[idx]

    def stack(self) -> np.ndarray:
        return np.stack([s.values for s in self.states])

    def to_csv(self, directory) -> None:
        """Index file ``index.csv`` plus one ``state_XXXX.csv`` per stored time."""
        from .gridfn import to_csv

        os.makedirs(directory, exist_ok=True)
        ext = self.extinction_time
        with open(os.path.join(directory, "index.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "mass", "max", "extinct"])
            for i, (t, s) in enumerate(zip(self.times, self.states)):
                extinct = int(ext is not None and math.isfinite(ext) and t >= ext)
                w.writerow(["%.17g" % t, "%.17g" % mass(s), "%.17g" % s.max(), extinct])
                to_csv(s, os.path.join(directory, f"state_{i:04d}.csv"))


def trajectory_from_function(grid: Grid, func: Callable, times: Sequence[float], m: float) -> Trajectory:
    """Sample a closed-form ``func(t, *coords)`` into a trajectory."""
    states = [GridFn(grid, grid.sample(lambda *c, t=t: func(t, *c))) for t in times]
    return Trajectory(np.asarray(times, dtype=float), states, m, boundary_model="closed-form")


def heat_trajectory(phi: GridFn, times: Sequence[float]) -> Trajectory:
    times = [float(t) for t in times]
    if times[0] != 0.0:
        times = [0.0] + times
    states = [heat_evolve(phi, t) for t in times]
    return Trajectory(np.array(times), states, 1.0, boundary_model="heat-kernel quadrature")


# -- implicit solver -------------------------------------------------------------


@dataclass(frozen=True)
class StepPolicy:
    """Geometric step growth from ``dt0`` (default ``h^2/4``).

    ``rel_cap`` limits ``dt <= rel_cap * t``, which keeps the backward Euler
    error proportional to the self-similar time scale.
    """

    dt0: Optional[float] = None
    growth: float = 1.2
    dt_max: float = math.inf
    rel_cap: Optional[float] = 0.01
    dt_min: float = 1e-14


def _boundary_mask(grid: Grid) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    for d in range(grid.n):
        idx = [slice(None)] * grid.n
        idx[d] = 0
        mask[tuple(idx)] = True
        idx[d] = grid.N - 1
        mask[tuple(idx)] = True
    return mask


def _lap1d(N: int, h: float, neumann: bool) -> sparse.csr_matrix:
    main = -2.0 * np.ones(N)
    up = np.ones(N - 1)
    lo = np.ones(N - 1)
    if neumann:
        up[0] = 2.0
        lo[-1] = 2.0
    return sparse.diags([lo, main, up], [-1, 0, 1], format="csr") / h**2


def _laplacian(grid: Grid, neumann: bool) -> sparse.csr_matrix:
    A1 = _lap1d(grid.N, grid.h, neumann)
    if grid.n == 1:
        return A1
    eye = sparse.identity(grid.N, format="csr")
    return (sparse.kron(A1, eye) + sparse.kron(eye, A1)).tocsr()


class _Stepper:
    """One backward Euler step ``u - dt Lap p(u) = u_old`` solved by Newton."""

    def __init__(self, grid: Grid, m: float, neumann: bool):
        self.grid = grid
        self.m = m
        self.neumann = neumann
        A = _laplacian(grid, neumann)
        if neumann:
            self.free = np.ones(grid.shape, dtype=bool).ravel()
        else:
            self.free = ~_boundary_mask(grid).ravel()
        fi = np.flatnonzero(self.free)
        bi = np.flatnonzero(~self.free)
        self.A_ff = A[fi][:, fi].tocsc()
        self.A_fb = A[fi][:, bi].tocsc()
        self.banded = grid.n == 1
        if self.banded:
            self.A_diag = (self.A_ff.diagonal(0), self.A_ff.diagonal(1), self.A_ff.diagonal(-1))

    def p_of_u(self, u):
        if self.m == 1:
            return u
        return np.power(u, self.m) / self.m

    def u_of_p(self, p):
        if self.m == 1:
            return p
        return np.power(self.m * p, 1.0 / self.m)

    def dudp(self, u):
        if self.m == 1:
            return np.ones_like(u)
        return np.power(u, 1.0 - self.m)

    def _solve(self, du, dt, rhs):
        if self.banded:
            d0, d1, dm1 = self.A_diag
            ab = np.zeros((3, du.size))
            ab[0, 1:] = -dt * d1
            ab[1] = du - dt * d0
            ab[2, :-1] = -dt * dm1
            return solve_banded((1, 1), ab, rhs)
        J = (sparse.diags(du) - dt * self.A_ff).tocsc()
        return splu(J).solve(rhs)

    def step(self, u_old_full: np.ndarray, dt: float, u_bdry: np.ndarray):
        """Return the new full state or ``None`` if Newton fails."""
        m = self.m
        u_old = np.maximum(u_old_full.ravel()[self.free], FLOOR)
        pb = self.p_of_u(np.maximum(u_bdry, FLOOR)) if u_bdry.size else u_bdry
        if u_bdry.size and m > 0:
            pb = np.where(u_bdry > 0, pb, 0.0)
        fb = self.A_fb @ pb if u_bdry.size else 0.0
        scale = max(float(np.max(u_old_full)), FLOOR)
        tol = NEWTON_TOL * scale
        p = self.p_of_u(u_old)
        p_floor = self.p_of_u(FLOOR) if m > 0 else None
        for _ in range(NEWTON_MAXIT):
            u = self.u_of_p(p)
            R = u - u_old - dt * (self.A_ff @ p + fb)
            if not np.all(np.isfinite(R)):
                return None
            if np.max(np.abs(R)) <= tol:
                out = np.zeros(self.grid.N**self.grid.n)
                out[self.free] = u
                out[~self.free] = u_bdry
                return out.reshape(self.grid.shape)
            dp = self._solve(self.dudp(u), dt, -R)
            p_new = p + dp
            if m == 1:
                pass
            elif m > 0:
                p_new = np.maximum(p_new, p_floor)
            else:
                p_new = np.where(p_new < 0, p_new, 0.5 * p)
            p = p_new
        return None


def _boundary_values(problem: DiffusionProblem, t: float) -> np.ndarray:
    grid = problem.initial.grid
    edge = _boundary_mask(grid)
    model = problem.boundary_model
    if model == "neumann":
        return np.zeros(0)
    if model == "dirichlet":
        return np.full(int(edge.sum()), problem.delta)
    if model == "frozen":
        return problem.initial.values[edge]
    coords = tuple(c[edge] for c in grid.coords())
    if model == "farfield":
        return np.asarray(problem.farfield(t, *coords), dtype=float) * np.ones(int(edge.sum()))
    if model == "superfast":
        m = problem.m
        L = grid.L
        phi_b = problem.initial.values[edge]
        return (phi_b ** (1 - m) + 2 * (1 + m) * t / ((1 - m) * L**2)) ** (1 / (1 - m))
    raise ValueError(f"unknown boundary model {model!r}")


def _evolve(problem: DiffusionProblem, t_end: float, policy: StepPolicy, store_times=None,
            threshold: Optional[float] = None, refine_extinction: bool = True) -> Trajectory:
    grid = problem.initial.grid
    model = problem.boundary_model
    stepper = _Stepper(grid, problem.m, neumann=(model == "neumann"))
    u = np.array(problem.initial.values)
    t = 0.0
    dt = policy.dt0 if policy.dt0 is not None else grid.h**2 / 4.0
    if store_times is not None:
        targets = sorted(float(s) for s in store_times if 0 < s <= t_end)
        if not targets or targets[-1] < t_end:
            targets.append(float(t_end))
    else:
        targets = None
    times, states = [0.0], [GridFn(grid, u, problem.initial.tail_exponent)]
    steps = rejected = 0
    extinction = None
    k = 0
    dt0 = dt
    while t < t_end * (1 - 1e-14):
        step = min(dt, t_end - t)
        if targets is not None:
            step = min(step, targets[k] - t)
        new = stepper.step(u, step, _boundary_values(problem, t + step))
        if new is None:
            rejected += 1
            dt = step / 2
            if dt < policy.dt_min:
                raise SolverError("Newton failed to converge", {"t": t, "dt": dt, "steps": steps})
            continue
        steps += 1
        if threshold is not None and new.max() < threshold:
            if refine_extinction:
                extinction = _refine_crossing(stepper, problem, u, t, step, threshold)
            else:
                extinction = t + step
            times.append(extinction)
            states.append(GridFn(grid, np.maximum(new, 0.0)))
            break
        u = np.maximum(new, 0.0)
        t += step
        if step >= dt:
            dt = min(dt * policy.growth, policy.dt_max)
        if policy.rel_cap is not None:
            dt = min(dt, max(policy.rel_cap * t, dt0))
        hit = targets is None
        if targets is not None and math.isclose(t, targets[k], rel_tol=1e-13, abs_tol=1e-15):
            t = targets[k]
            k += 1
            hit = True
        if hit:
            times.append(t)
            states.append(GridFn(grid, u))
    traj = Trajectory(np.array(times), states, problem.m, problem, extinction_time=extinction,
                      boundary_model=model,
                      diagnostics={"steps": steps, "rejected": rejected})
    if threshold is not None and extinction is None:
        traj.extinction_time = math.inf
    return traj


def _refine_crossing(stepper, problem, u_prev, t_prev, step, threshold, iters: int = 60) -> float:
    lo, hi = 0.0, step
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        trial = stepper.step(u_prev, mid, _boundary_values(problem, t_prev + mid))
        if trial is None:
            break
        if trial.max() < threshold:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-13 * max(1.0, t_prev):
            break
    return t_prev + hi


def pme_evolve(problem: DiffusionProblem, t_end: float, dt_control: StepPolicy = StepPolicy(),
               store_times=None) -> Trajectory:
    """Backward Euler trajectory for ``0 < m <= 1``.

    ``store_times`` lists the times to keep (the solver lands on them
    exactly); by default every accepted step is stored.  Dirichlet problems
    with ``m < 1`` stop at the extinction time defined by the default
    threshold ``1e-8 max(initial)``.
    """
    if not 0 < problem.m <= 1:
        raise ValueError(f"pme_evolve handles 0 < m <= 1, got m={problem.m}; use superfast_evolve")
    threshold = None
    if problem.domain_kind == "dirichlet_box" and problem.m < 1 and problem.delta == 0:
        threshold = 1e-8 * problem.initial.max()
    return _evolve(problem, t_end, dt_control, store_times, threshold)


def superfast_evolve(phi: GridFn, m: float, t_end: float, dt_control: StepPolicy = StepPolicy(),
                     store_times=None) -> Trajectory:
    """One-dimensional evolution for ``-1 < m < 0`` with a power-law far field.

    Diagnostics record the box mass, the analytic tail mass beyond the box
    (``2 A(t) L^(1-q)/(q-1)`` with ``q = 2/(1-m)``) and their sum, plus a
    discrete Lipschitz constant of ``phi^m``.
    """
    if not -1 < m < 0:
        raise ValueError(f"superfast regime needs -1 < m < 0, got {m}")
    if phi.grid.n != 1:
        raise ValueError("the superfast solver is one-dimensional")
    if np.any(phi.values <= 0):
        raise ValueError("initial data must be strictly positive")
    q = 2.0 / (1.0 - m)
    if phi.tail_exponent is None or not math.isclose(phi.tail_exponent, -q, rel_tol=1e-9):
        raise ValueError(f"initial data must carry tail_exponent {-q}")
    problem = DiffusionProblem(bundle_from_m(m, 1), "cauchy_box", phi, boundary="superfast")
    traj = _evolve(problem, t_end, dt_control, store_times)
    L = phi.grid.L
    A0 = 0.5 * (phi.values[0] + phi.values[-1]) * L**q
    A = (A0 ** (1 - m) + 2 * (1 + m) * traj.times / (1 - m)) ** (1 / (1 - m))
    tail = 2 * A * L ** (1 - q) / (q - 1)
    box = traj.masses
    lip = np.max(np.abs(np.diff(phi.values**m))) / phi.grid.h
    traj.diagnostics.update(box_mass=box, tail_mass=tail, total_mass=box + tail, lipschitz_phi_m=lip)
    return traj


def dirichlet_extinction_time(problem: DiffusionProblem, threshold: Optional[float] = None,
                              t_end: float = 100.0, dt_control: StepPolicy = StepPolicy()) -> float:
    """First time ``max u`` drops below ``threshold``; ``inf`` when it never does.

    For ``m = 1`` the heat flow never vanishes identically, so the answer is
    ``inf`` regardless of the threshold.
    """
    if problem.domain_kind != "dirichlet_box":
        raise ValueError("extinction is defined for the Dirichlet problem")
    if not 0 < problem.m <= 1:
        raise ValueError("extinction needs 0 < m <= 1")
    if problem.m == 1:
        return math.inf
    if threshold is None:
        threshold = 1e-8 * problem.initial.max()
    traj = _evolve(problem, t_end, dt_control, store_times=[], threshold=threshold)
    return traj.extinction_time


# -- diagnostics -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ResidualField:
    """Signed residual ``u_t + F(u, Du, D^2u)`` at interior nodes (NaN elsewhere)."""

    grid: Grid
    values: np.ndarray
    time: float
    truncation_estimate: float

    def max_abs(self, mask=None) -> float:
        v = self.values if mask is None else np.where(mask, self.values, np.nan)
        return float(np.nanmax(np.abs(v))) if np.any(np.isfinite(v)) else 0.0


def _spatial_terms(u: np.ndarray, h: float, n: int):
    """Centered ``Lap u`` and ``|grad u|^2`` on interior nodes (NaN on the boundary)."""
    lap = np.full(u.shape, np.nan)
    grad2 = np.full(u.shape, np.nan)
    inner = (slice(1, -1),) * n
    lap_in = np.zeros(tuple(s - 2 for s in u.shape))
    g_in = np.zeros_like(lap_in)
    for d in range(n):
        plus = [slice(1, -1)] * n
        minus = [slice(1, -1)] * n
        plus[d] = slice(2, None)
        minus[d] = slice(0, -2)
        up, um = u[tuple(plus)], u[tuple(minus)]
        lap_in += (up - 2 * u[inner] + um) / h**2
        g_in += ((up - um) / (2 * h)) ** 2
    lap[inner] = lap_in
    grad2[inner] = g_in
    return lap, grad2


def F_operator(u, lap, grad2, m: float):
    """``-u^(m-1) Lap u - (m-1) u^(m-2) |grad u|^2``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.power(u, m - 1) * lap - (m - 1) * np.power(u, m - 2) * grad2


def _time_derivative(times, states, k):
    t = times
    if 0 < k < len(t) - 1:
        h1, h2 = t[k] - t[k - 1], t[k + 1] - t[k]
        return (-h2 / (h1 * (h1 + h2)) * states[k - 1]
                + (h2 - h1) / (h1 * h2) * states[k]
                + h1 / (h2 * (h1 + h2)) * states[k + 1])
    if k == 0:
        return (states[1] - states[0]) / (t[1] - t[0])
    return (states[k] - states[k - 1]) / (t[k] - t[k - 1])


def _residual_values(times, arrays, k, m, h, n):
    u = arrays[k]
    ut = _time_derivative(times, arrays, k)
    lap, grad2 = _spatial_terms(u, h, n)
    r = ut + F_operator(u, lap, grad2, m)
    return np.where(u > 0, r, np.nan), u, lap


def residual(traj: Trajectory, at_time_index: int) -> ResidualField:
    """Residual of the stored discrete states; time derivative by three-point differences."""
    arrays = [s.values for s in traj.states]
    grid = traj.grid
    k = at_time_index % len(arrays)
    r, u, _ = _residual_values(traj.times, arrays, k, traj.m, grid.h, grid.n)
    # rough truncation estimate: h^2/12 |D^4 p| + (dt/2) |u_tt|
    p = u**traj.m / traj.m
    est = 0.0
    if grid.N > 5:
        d4 = np.abs(np.diff(p, 4, axis=0)) / grid.h**4
        est += grid.h**2 / 12 * float(np.nanmax(d4))
    if 0 < k < len(arrays) - 1:
        t = traj.times
        h1, h2 = t[k] - t[k - 1], t[k + 1] - t[k]
        utt = 2 * (h1 * arrays[k + 1] - (h1 + h2) * arrays[k] + h2 * arrays[k - 1]) / (h1 * h2 * (h1 + h2))
        est += 0.5 * max(h1, h2) * float(np.max(np.abs(utt)))
    return ResidualField(grid, r, float(traj.times[k]), est)


class CheckReport(NamedTuple):
    passed: bool
    worst: float
    where: Optional[tuple]  # (x, t)
    checked: int


def subsolution_check(times: Sequence[float], results: Sequence, m: float, tol: float,
                      curvature_bound: float = 1e3) -> CheckReport:
    """One-sided residual test on a convolved trajectory.

    ``results`` are ``ConvolutionResult`` objects at ``times``.  Nodes count
    only where the supremum is attained in the interior (also at both spatial
    neighbours), the value is positive, and second differences stay below
    ``curvature_bound * max u`` (a numerical C^2 proxy).
    """
    arrays = [r.ubar.values for r in results]
    grid = results[0].ubar.grid
    times = np.asarray(times, dtype=float)
    worst, where, checked = -math.inf, None, 0
    for k in range(1, len(arrays) - 1):
        r, u, lap = _residual_values(times, arrays, k, m, grid.h, grid.n)
        ok = np.asarray(results[k].attained).copy()
        for d in range(grid.n):
            ok &= np.roll(ok, 1, axis=d) & np.roll(ok, -1, axis=d)
        for kk in (k - 1, k + 1):
            ok &= np.asarray(results[kk].attained)
        ok &= np.isfinite(r) & (u > 0) & (np.abs(lap) <= curvature_bound * u.max())
        if not ok.any():
            continue
        checked += int(ok.sum())
        vals = np.where(ok, r, -np.inf)
        idx = np.unravel_index(int(np.argmax(vals)), vals.shape)
        if vals[idx] > worst:
            worst = float(vals[idx])
            where = (tuple(c[idx] for c in grid.coords()), float(times[k]))
    return CheckReport(worst <= tol, worst, where, checked)


def comparison_check(u_traj: Trajectory, v_traj: Trajectory, tol: float = 0.0) -> CheckReport:
    """Verify ``u <= v + tol`` at every common stored time."""
    if u_traj.grid != v_traj.grid:
        raise ValueError("trajectories live on different grids")
    if not np.allclose(u_traj.times, v_traj.times, rtol=1e-12, atol=0):
        raise ValueError("trajectories must share their stored times")
    if np.any(u_traj.states[0].values > v_traj.states[0].values + tol):
        raise ValueError("initial data are not ordered")
    worst, where = -math.inf, None
    first_fail = None
    for t, a, b in zip(u_traj.times, u_traj.states, v_traj.states):
        d = a.values - b.values
        idx = np.unravel_index(int(np.argmax(d)), d.shape)
        if d[idx] > worst:
            worst = float(d[idx])
            where = (tuple(c[idx] for c in a.grid.coords()), float(t))
        if first_fail is None and d[idx] > tol:
            first_fail = (tuple(c[idx] for c in a.grid.coords()), float(t))
    return CheckReport(first_fail is None, worst, first_fail or where, len(u_traj.times))
