"""Large-time probes ``t^(n/d) u(0,t)``, the explicit self-similar profile and scaling laws."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .diffusion import (DiffusionProblem, StepPolicy, Trajectory, heat_evolve, pme_evolve,
                        trajectory_from_function)
from .gridfn import Grid, GridFn
from .means import bundle_from_m

__all__ = [
    "AsymptoticSeries",
    "BarenblattProfile",
    "barenblatt_profile",
    "default_times",
    "general_limit_check",
    "heat_limit_check",
    "mass_scaling_law",
]

CONVERGED_SPREAD = 0.02


def default_times(t0: float = 1.0, t1: float = 1024.0) -> np.ndarray:
    """Dyadic sequence from ``t0`` to ``t1``."""
    k = int(round(math.log2(t1 / t0)))
    return t0 * 2.0 ** np.arange(k + 1)


@dataclass(frozen=True, eq=False)
class AsymptoticSeries:
    times: np.ndarray
    probe_values: np.ndarray
    extrapolated_limit: float
    convergence_quality: float

    @property
    def converged(self) -> bool:
        return self.convergence_quality < CONVERGED_SPREAD

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "probe", "extrapolated", "quality"])
            for t, p in zip(self.times, self.probe_values):
                w.writerow(["%.17g" % t, "%.17g" % p, "%.17g" % self.extrapolated_limit,
                            "%.17g" % self.convergence_quality])


def _series(times, probes, d: float) -> AsymptoticSeries:
    times = np.asarray(times, dtype=float)
    probes = np.asarray(probes, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    if len(times) < 2:
        # a single probe has no spread to measure and nothing to extrapolate
        return AsymptoticSeries(times, probes, float(probes[-1]), math.inf)
    q = max(2, int(math.ceil(len(times) / 4)))
    tail_t, tail_p = times[-q:], probes[-q:]
    spread = float((tail_p.max() - tail_p.min()) / abs(tail_p.mean())) if tail_p.mean() else math.inf
    # fit a + b t^(-2/d) over the last quartile; a is the limit
    X = np.column_stack([np.ones(q), tail_t ** (-2.0 / d)])
    (a, _), *_ = np.linalg.lstsq(X, tail_p, rcond=None)
    return AsymptoticSeries(times, probes, float(a), spread)


def heat_limit_check(phi: GridFn, times: Sequence[float]) -> AsymptoticSeries:
    """``(4 pi t)^(n/2) u(0,t)`` along the heat flow; tends to the mass of ``phi``."""
    n = phi.grid.n
    probes = [(4 * math.pi * t) ** (n / 2) * heat_evolve(phi, t).at_origin() for t in times]
    return _series(times, probes, 2.0)


def general_limit_check(traj: Trajectory) -> AsymptoticSeries:
    """``t^(n/d) u(0,t)`` over the positive stored times of a Cauchy trajectory."""
    n = traj.grid.n
    bundle = bundle_from_m(traj.m, n)
    if not bundle.d > 0:
        raise ValueError("the probe needs a supercritical exponent")
    keep = traj.times > 0
    times = traj.times[keep]
    probes = [t ** (n / bundle.d) * s.at_origin() for t, s in zip(times, np.array(traj.states, dtype=object)[keep])]
    return _series(times, probes, bundle.d)


@dataclass(frozen=True)
class BarenblattProfile:
    """``U(x,t) = K (t / (|x|^2 + C t^(2/d)))^(1/(1-m))`` with ``K = (2d/(1-m))^(1/(1-m))``."""

    m: float
    n: int
    mass: float
    C_tilde: float

    @property
    def d(self) -> float:
        return self.n * (self.m - 1) + 2

    @property
    def power(self) -> float:
        return 1.0 / (1.0 - self.m)

    @property
    def K(self) -> float:
        return (2 * self.d / (1 - self.m)) ** self.power

    def __call__(self, t, *coords):
        r2 = sum(np.asarray(c, dtype=float) ** 2 for c in coords)
        return self.K * (t / (r2 + self.C_tilde * t ** (2.0 / self.d))) ** self.power

    def on_grid(self, grid: Grid, t: float) -> GridFn:
        tail = -2.0 * self.power
        return GridFn(grid, grid.sample(lambda *c: self(t, *c)), tail_exponent=tail)

    def farfield(self, t0: float = 0.0):
        """Boundary callable for the solver, for the profile shifted by ``t0`` in time."""
        return lambda t, *c: self(t + t0, *c)

    def trajectory(self, grid: Grid, times: Sequence[float]) -> Trajectory:
        return trajectory_from_function(grid, self, times, self.m)


def profile_integral(m: float, n: int) -> float:
    """``int (1 + |y|^2)^(-1/(1-m)) dy`` over R^n."""
    p = 1.0 / (1.0 - m)
    return math.pi ** (n / 2) * math.gamma(p - n / 2) / math.gamma(p)


def barenblatt_profile(m: float, n: int, mass: float) -> BarenblattProfile:
    """Self-similar solution with the given mass; ``C_tilde`` from the exact integral."""
    if not -1 < m < 1:
        raise ValueError("the profile is defined for -1 < m < 1")
    d = n * (m - 1) + 2
    if not d > 0:
        raise ValueError("the profile needs a supercritical exponent")
    if not mass > 0:
        raise ValueError("mass must be positive")
    p = 1.0 / (1.0 - m)
    K = (2 * d / (1 - m)) ** p
    C = (mass / (K * profile_integral(m, n))) ** (1.0 / (n / 2 - p))
    return BarenblattProfile(m, n, mass, C)


def _limit(phi: GridFn, m: float, times, policy: StepPolicy) -> AsymptoticSeries:
    if m == 1:
        return heat_limit_check(phi, times)
    prob = DiffusionProblem(bundle_from_m(m, phi.grid.n), "cauchy_box", phi)
    traj = pme_evolve(prob, float(times[-1]), policy, store_times=times)
    return general_limit_check(traj)


def mass_scaling_law(phi: GridFn, m: float, n: int, c: float, times: Optional[Sequence[float]] = None,
                     policy: StepPolicy = StepPolicy(rel_cap=0.02)):
    """Measured ``limit(c phi) / limit(phi)`` and the predicted ``c^(2/d)``.

    Returns ``(ratio, predicted, series_phi, series_cphi)``.
    """
    if n != phi.grid.n:
        raise ValueError("dimension mismatch")
    bundle = bundle_from_m(m, n)
    if not bundle.d > 0:
        raise ValueError("the scaling law needs a supercritical exponent")
    times = default_times() if times is None else np.asarray(times, dtype=float)
    base = _limit(phi, m, times, policy)
    scaled = _limit(phi * c, m, times, policy)
    for s in (base, scaled):
        if not s.converged:
            raise RuntimeError(f"probe series did not converge (spread {s.convergence_quality:.3g})")
    ratio = scaled.extrapolated_limit / base.extrapolated_limit
    return ratio, c ** (2.0 / bundle.d), base, scaled
