"""End-to-end verification of the power-mean integral inequality and its supporting constructions."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .convolution import HypothesisReport, check_hypothesis, minimal_h, minkowski_convolve
from .diffusion import DiffusionProblem, StepPolicy, heat_trajectory, pme_evolve
from .gridfn import (Grid, GridFn, cap, gaussian, indicator, j_formula, k_formula, mass, mollify_values,
                     truncate_J, truncate_K)
from .means import ExponentBundle, as_exponent, make_bundle, mean_shift_bound, power_mean

__all__ = [
    "BBLReport",
    "BBLTriple",
    "DynamicReport",
    "ReducedTriple",
    "boundary_case_reduce",
    "random_triple",
    "reduce_exponent",
    "regularize_triple",
    "verify_bbl",
    "verify_theorem_1_3",
    "write_reports",
]

EQUALITY_RTOL = 1e-3
# exact-equality pairs reproduce the hypothesis only up to floating-point rounding
ROUNDING_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class BBLTriple:
    """Data ``(f, g, h)`` on one grid with splitting weight ``lam`` and exponent ``bundle.alpha``.

    ``mu`` is the weight used inside the mean; it equals ``lam`` except for
    triples produced by exponent reduction.
    """

    f: GridFn
    g: GridFn
    h: GridFn
    lam: float
    bundle: ExponentBundle
    mu: Optional[float] = None

    def __post_init__(self):
        if not (self.f.grid == self.g.grid == self.h.grid):
            raise ValueError("f, g, h must share one grid")
        if not 0 < self.lam < 1:
            raise ValueError("lam must lie in (0, 1)")
        if not (mass(self.f) > 0 and mass(self.g) > 0):
            raise ValueError("f and g need positive mass")
        if self.mu is not None and not 0 < self.mu < 1:
            raise ValueError("mu must lie in (0, 1)")

    @classmethod
    def make(cls, f, g, h, lam, alpha, mu=None) -> "BBLTriple":
        return cls(f, g, h, lam, make_bundle(alpha, f.grid.n), mu)

    @property
    def alpha(self) -> float:
        return self.bundle.alpha

    @property
    def mean_weight(self) -> float:
        return self.lam if self.mu is None else self.mu

    def hypothesis(self, tol: float = 0.0, alpha=None) -> HypothesisReport:
        a = self.alpha if alpha is None else alpha
        mw = None if self.mu is None else self.mu
        return check_hypothesis(self.f, self.g, self.h, self.lam, a, tol, mean_weight=mw)


class BBLReport(NamedTuple):
    hypothesis: HypothesisReport
    lhs: float
    rhs: float
    slack: float
    near_equality: bool
    vacuous: bool
    consistent: bool  # False flags a hypothesis-passing triple violating the conclusion

    @property
    def relative_slack(self) -> float:
        return self.slack / self.rhs if self.rhs else math.inf


def _conclusion(F: float, G: float, weight: float, bundle: ExponentBundle):
    return power_mean(F, G, weight, bundle.alpha_prime)


def verify_bbl(triple: BBLTriple, tol: float = 1e-9, hyp_tol: float = 0.0,
               equality_rtol: float = EQUALITY_RTOL) -> BBLReport:
    """Check the pointwise hypothesis and compare ``int h`` with the mean of the masses."""
    hyp = triple.hypothesis(hyp_tol)
    lhs = mass(triple.h)
    rhs = _conclusion(mass(triple.f), mass(triple.g), triple.mean_weight, triple.bundle)
    slack = lhs - rhs
    near = abs(slack) <= equality_rtol * rhs
    consistent = (not hyp.passed) or slack >= -tol
    return BBLReport(hyp, lhs, rhs, slack, near, not hyp.passed, consistent)


def write_reports(rows: Sequence[tuple], path) -> None:
    """``rows`` of ``(case_id, triple, report)`` as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "alpha", "lambda", "lhs", "rhs", "slack", "hypothesis_pass", "near_equality"])
        for case_id, triple, rep in rows:
            w.writerow([case_id, "%.17g" % triple.alpha, "%.17g" % triple.lam, "%.17g" % rep.lhs,
                        "%.17g" % rep.rhs, "%.17g" % rep.slack, int(rep.hypothesis.passed),
                        int(rep.near_equality)])


# -- dynamic check -------------------------------------------------------------


class DynamicReport(NamedTuple):
    passed: bool
    times: np.ndarray
    worst: np.ndarray          # max(ubar - u_lam) per time
    scale: np.ndarray          # max u_lam per time
    rel_tol: float


def verify_theorem_1_3(triple: BBLTriple, times: Sequence[float], rel_tol: float = 1e-3,
                       policy: StepPolicy = StepPolicy(), m: Optional[float] = None,
                       hyp_rtol: float = ROUNDING_RTOL) -> DynamicReport:
    """Evolve ``f, g, h`` separately and compare ``u_lam`` with the convolution of ``u_0, u_1``.

    The flow uses ``m = 2 alpha + 1`` unless ``m`` is given; the triple must
    satisfy the hypothesis at ``alpha = (m - 1)/2``.
    """
    m = triple.bundle.m if m is None else float(m)
    alpha = (m - 1) / 2
    if not 0 < m <= 1:
        raise ValueError("the dynamic check needs 0 < m <= 1")
    bundle = make_bundle(alpha, triple.f.grid.n)
    if not bundle.d > 0:
        raise ValueError("the dynamic check needs a supercritical exponent")
    hyp = check_hypothesis(triple.f, triple.g, triple.h, triple.lam, alpha, hyp_rtol * triple.h.max())
    if not hyp.passed:
        raise ValueError(f"hypothesis fails at t=0 (violation {hyp.worst_violation:.3g})")
    times = np.asarray(sorted(float(t) for t in times if t > 0))
    trajs = []
    for u in (triple.f, triple.g, triple.h):
        if m == 1:
            trajs.append(heat_trajectory(u, times))
        else:
            prob = DiffusionProblem(bundle, "cauchy_box", u)
            trajs.append(pme_evolve(prob, float(times[-1]), policy, store_times=times))
    worst, scale = [], []
    for k, t in enumerate(times):
        u0, u1, ul = (tr.state_at(t) for tr in trajs)
        ubar = minkowski_convolve(u0, u1, triple.lam, alpha).ubar
        worst.append(float(np.max(ubar.values - ul.values)))
        scale.append(ul.max())
    worst, scale = np.array(worst), np.array(scale)
    return DynamicReport(bool(np.all(worst <= rel_tol * scale)), times, worst, scale, rel_tol)


# -- regularization --------------------------------------------------------------


def _j_padding(orig_n, delta, c, alpha, beta):
    """Values of ``J`` outside the box, where the original data vanish."""
    def ext(*coords):
        r = np.sqrt(sum(x**2 for x in coords))
        return j_formula(0.0, r, delta, c, alpha, beta)
    return ext


def _k_padding(delta, gamma, c, beta):
    def ext(*coords):
        r = np.sqrt(sum(x**2 for x in coords))
        return k_formula(0.0, r, delta, gamma, c, beta)
    return ext


def _mollify_transformed(f: GridFn, eps: float, forward, backward, pad) -> GridFn:
    v_pad = (lambda *c: forward(pad(*c))) if pad is not None else None
    w = mollify_values(f.grid, forward(f.values), eps, extension=v_pad)
    return GridFn(f.grid, backward(w), f.tail_exponent)


def regularize_triple(triple: BBLTriple, delta: float, eps: float, beta: Optional[float] = None) -> BBLTriple:
    """Strictly positive mollified triple that still satisfies the hypothesis.

    ``alpha < 0``: ``J`` truncations (constant ``a = min(lam, 1-lam)^(1/alpha)``
    for ``h``, from the mean-shift bound) followed by mollification of
    ``J^alpha``.  ``alpha = 0``: cap at ``ell``, ``K`` truncations with a shared
    ``beta`` in ``(-min(lam, 1-lam), 0)``, mollification of ``log K``.
    Mollification uses formula values beyond the box, not zeros.
    """
    alpha = triple.alpha
    lam = triple.lam
    n = triple.f.grid.n
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if alpha < 0:
        if not alpha > -1.0 / n:
            raise ValueError("regularization needs alpha > -1/n")
        if beta is None:
            beta = 0.5 * (n * alpha + 1) / (n * alpha)
        a = mean_shift_bound(1.0, 1.0, lam, alpha, 1.0).upper
        parts = []
        for u, c in ((triple.f, 1.0), (triple.g, 1.0), (triple.h, a)):
            J = truncate_J(u, delta, c, alpha, beta)
            pad = _j_padding(n, delta, c, alpha, beta)
            parts.append(_mollify_transformed(J, eps, lambda v: v**alpha, lambda v: v ** (1 / alpha), pad))
        return BBLTriple(*parts, lam, triple.bundle, triple.mu)
    if alpha == 0:
        lam0 = min(lam, 1 - lam)
        if beta is None:
            beta = -0.9 * lam0
        if not -lam0 < beta < 0:
            raise ValueError("beta must lie in (-min(lam, 1-lam), 0)")
        ell = max(1.0, triple.f.max(), triple.g.max(), triple.h.max())
        parts = []
        for u, gamma, c in ((triple.f, 1.0, 1.0), (triple.g, 1.0, 1.0), (triple.h, lam0, ell)):
            K = truncate_K(cap(u, ell), delta, gamma, c, beta)
            pad = _k_padding(delta, gamma, c, beta)
            parts.append(_mollify_transformed(K, eps, np.log, np.exp, pad))
        return BBLTriple(*parts, lam, triple.bundle, triple.mu)
    raise ValueError("regularization is implemented for alpha <= 0")


# -- exponent reduction -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReducedTriple:
    """Rescaled triple; ``f_hat`` and ``g_hat`` live on dilated copies of the grid.

    Node ``j`` of ``f_hat`` sits at ``y_j / s_f`` where ``y_j`` is node ``j``
    of the original grid, so the splitting ``(1-lam) y + lam z`` is the same
    index relation as before and the hypothesis is checked in index space
    with geometric weight ``lam`` and mean weight ``mu``.
    """

    f_hat: GridFn
    g_hat: GridFn
    h_hat: GridFn
    lam: float
    mu: float
    p: float
    params: dict = field(default_factory=dict)

    def hypothesis(self, tol: float = 0.0) -> HypothesisReport:
        grid = self.h_hat.grid
        f = GridFn(grid, self.f_hat.values)
        g = GridFn(grid, self.g_hat.values)
        return check_hypothesis(f, g, self.h_hat, self.lam, self.p, tol, mean_weight=self.mu)

    def masses(self):
        return mass(self.f_hat), mass(self.g_hat), mass(self.h_hat)

    def ratio(self) -> float:
        """``int h_hat / M_{p'}(int f_hat, int g_hat; mu)``."""
        F, G, H = self.masses()
        bundle = make_bundle(self.p, self.h_hat.grid.n)
        return H / power_mean(F, G, self.mu, bundle.alpha_prime)

    def as_triple(self) -> BBLTriple:
        grid = self.h_hat.grid
        return BBLTriple(GridFn(grid, self.f_hat.values), GridFn(grid, self.g_hat.values), self.h_hat,
                         self.lam, make_bundle(self.p, grid.n), self.mu)


def reduce_exponent(triple: BBLTriple, p) -> ReducedTriple:
    """Mass-normalizing dilations turning the exponent-``q`` problem into one at ``p <= q``."""
    p = as_exponent(p)
    q = triple.alpha
    n = triple.f.grid.n
    if p < -1.0 / n - 1e-14:
        raise ValueError("p must be at least -1/n")
    if p > q:
        raise ValueError("p must not exceed the triple's exponent")
    if q == -1.0 / n:
        raise ValueError("the reduction degenerates at q = -1/n")
    if triple.mu is not None and triple.mu != triple.lam:
        raise ValueError("reduce a triple whose mean weight equals its splitting weight")
    F, G = mass(triple.f), mass(triple.g)
    lam = triple.lam
    if q == 0:
        M, sF, sG, kF, kG = 1.0, 1.0, 1.0, F, G
        mu = lam
    else:
        qp = triple.bundle.alpha_prime
        M = (1 - lam) * F**qp + lam * G**qp
        mu = lam * G**qp / M
        sF, sG = F**qp / M, G**qp / M
        expo = 0.0 if q == math.inf else 1.0 / (1 + n * q)
        kF, kG = M**n * F**expo, M**n * G**expo
    denom = power_mean(F, G, lam, triple.bundle.alpha_prime)
    grid = triple.f.grid
    f_hat = GridFn(grid.dilate(1.0 / sF), triple.f.values / kF)
    g_hat = GridFn(grid.dilate(1.0 / sG), triple.g.values / kG)
    h_hat = GridFn(grid, triple.h.values / denom)
    params = dict(F=F, G=G, M=M, mu=mu, scale_f=sF, scale_g=sG, norm_f=kF, norm_g=kG, denominator=denom)
    return ReducedTriple(f_hat, g_hat, h_hat, lam, mu, p, params)


def boundary_case_reduce(triple: BBLTriple, eps: float) -> BBLTriple:
    """Surrogate at exponent ``-1/n + eps``: ``min(phi^(1/(1 - n eps)), 1/eps)`` componentwise."""
    n = triple.f.grid.n
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not math.isclose(triple.alpha, -1.0 / n, rel_tol=0, abs_tol=1e-14):
        raise ValueError("the surrogate applies to alpha = -1/n")
    if not n * eps < 1:
        raise ValueError("eps must be below 1/n")
    r = 1.0 / (1.0 - n * eps)

    def hat(u: GridFn) -> GridFn:
        return GridFn(u.grid, np.minimum(u.values**r, 1.0 / eps))

    return BBLTriple(hat(triple.f), hat(triple.g), hat(triple.h), triple.lam,
                     make_bundle(-1.0 / n + eps, n), triple.mu)


# -- random data ---------------------------------------------------------------------


def random_component(rng: np.random.Generator, grid: Grid, reach: float = 2.0, snap: int = 4) -> GridFn:
    """Mixture of one to three Gaussians and interval indicators.

    Indicator endpoints sit on multiples of ``snap * h``.  For splitting
    weights 1/4 and 1/2 the admissible node pairs are congruent modulo 4, so
    jumps on this sublattice are combined without losing a partial cell.
    """
    vals = np.zeros(grid.shape)
    for _ in range(int(rng.integers(1, 4))):
        amp = rng.uniform(0.3, 2.0)
        c = rng.uniform(-reach, reach, size=grid.n)
        if rng.random() < 0.6:
            vals = vals + gaussian(grid, c, rng.uniform(0.3, 1.2), amp).values
        else:
            half = rng.uniform(0.2, 1.0)
            step = snap * grid.h
            a = np.round((c[0] - half) / step) * step
            b = max(np.round((c[0] + half) / step) * step, a + step)
            vals = vals + indicator(grid, a, b, level=amp).values
    return GridFn(grid, vals)


def random_triple(rng: np.random.Generator, grid: Grid, alpha: float, lam: float) -> BBLTriple:
    f = random_component(rng, grid)
    g = random_component(rng, grid)
    return BBLTriple.make(f, g, minimal_h(f, g, lam, alpha), lam, alpha)
