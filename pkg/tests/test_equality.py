import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bbllab.bbl import BBLTriple
from bbllab.diffusion import heat_evolve, heat_trajectory
from bbllab.equality import (detect_strong_logconcavity, equality_pipeline, harmonic_mean_matrix,
                             legendre_transform, matrix_equality_diagnostics, potential, recover_homothety)
from bbllab.gridfn import Grid, GridFn, gaussian, indicator, two_bumps

G = Grid(1, 10, 401)


def quadratic_potential(grid, a=1.0, shift=0.0, half_width=None):
    x = grid.axis
    window = np.ones(grid.shape, dtype=bool) if half_width is None else np.abs(x - shift) <= half_width + 1e-12
    W = np.where(window, 0.5 * a * (x - shift) ** 2, np.nan)
    return W, window


def random_convex(seed, grid):
    rng = np.random.default_rng(seed)
    x = grid.axis
    return 0.5 * rng.uniform(0.2, 3) * (x - rng.uniform(-1, 1)) ** 2 + rng.uniform(0, 1) * np.abs(x) ** 3 / 10


class TestDetection:
    def test_gaussian_from_the_start(self):
        tr = heat_trajectory(gaussian(G), [0.5, 1.0])
        # log u'' = -2/(1 + 4t) never reaches -2.5
        assert detect_strong_logconcavity(tr, 0.5) == 0.0
        assert detect_strong_logconcavity(tr, 2.5) is None

    def test_two_bumps_eventually(self):
        tr = heat_trajectory(two_bumps(G), np.geomspace(0.01, 10, 31))
        t_star = detect_strong_logconcavity(tr, 1e-3)
        assert t_star is not None and t_star > 0.01
        assert detect_strong_logconcavity(heat_trajectory(two_bumps(G), [0.01]), 1e-3) is None

    def test_indicator_first_positive_time(self):
        tr = heat_trajectory(indicator(G, -1, 1), [0.1, 0.2, 0.5])
        assert detect_strong_logconcavity(tr, 1e-3) == 0.1

    def test_potential_window(self):
        W, window = potential(indicator(G, -1, 1))
        assert window.sum() == 41 and np.isnan(W[0])


class TestLegendre:
    def test_self_dual(self):
        g = Grid(1, 6, 601)
        W, window = quadratic_potential(g)
        xi = np.linspace(-3, 3, 61)
        pair = legendre_transform(g, W, window, [xi])
        # grid maximum misses the continuous one by at most h^2/8
        assert np.max(np.abs(pair.W_star - xi**2 / 2)) <= g.h**2 / 8 + 1e-15
        assert not pair.clamped.any()

    def test_clamped_rim(self):
        g = Grid(1, 4, 81)
        W, window = quadratic_potential(g, half_width=2.0)
        pair = legendre_transform(g, W, window, [np.array([3.0])])
        assert pair.W_star[0] == pytest.approx(4.0, rel=1e-14)
        assert pair.argmax_points()[0, 0] == pytest.approx(2.0)
        assert pair.clamped[0]

    def test_empty_window(self):
        with pytest.raises(ValueError):
            legendre_transform(G, np.zeros(G.shape), np.zeros(G.shape, dtype=bool), G)

    def test_dual_hessian_inverts_primal(self):
        g = Grid(1, 6, 601)
        W, window = quadratic_potential(g, a=2.0)
        pair = legendre_transform(g, W, window, [np.linspace(-4, 4, 81)])
        defect = pair.duality_defect()
        assert np.nanmax(np.abs(defect)) <= 10 * g.h

    @given(st.integers(0, 10**6), st.integers(-20, 20))
    def test_shift_rule_exact(self, seed, s):
        g = Grid(1, 4, 161)
        W1 = random_convex(seed, g)
        window = np.abs(g.axis) <= 2.0
        eta = s * g.h
        W2 = np.roll(np.where(window, W1, np.nan), s)
        w2 = np.roll(window, s)
        xi = np.linspace(-2, 2, 41)
        a = legendre_transform(g, np.where(window, W1, 0.0), window, [xi])
        b = legendre_transform(g, np.where(w2, W2, 0.0), w2, [xi])
        np.testing.assert_allclose(b.W_star, a.W_star + eta * xi, rtol=0, atol=1e-12)

    @given(st.integers(0, 10**6))
    def test_double_conjugate_below(self, seed):
        g = Grid(1, 3, 61)
        rng = np.random.default_rng(seed)
        W = rng.uniform(-1, 1, g.shape) + g.axis**2
        window = np.ones(g.shape, dtype=bool)
        pair = legendre_transform(g, W, window, [np.linspace(-8, 8, 121)])
        assert np.all(pair.double_conjugate() <= W + 1e-12)

    @given(st.integers(0, 10**6))
    def test_conjugate_convex(self, seed):
        g = Grid(1, 3, 61)
        rng = np.random.default_rng(seed)
        W = rng.uniform(-1, 1, g.shape)
        pair = legendre_transform(g, W, np.ones(g.shape, dtype=bool), [np.linspace(-5, 5, 101)])
        assert np.min(np.diff(pair.W_star, 2)) >= -1e-12

    def test_two_dimensional(self):
        g = Grid(2, 3, 61)
        X, Y = g.coords()
        W = 0.5 * (X**2 + 2 * Y**2)
        xi = np.linspace(-1, 1, 5)
        pair = legendre_transform(g, W, np.ones(g.shape, dtype=bool), [xi, xi])
        A, B = np.meshgrid(xi, xi, indexing="ij")
        np.testing.assert_allclose(pair.W_star, 0.5 * A**2 + 0.25 * B**2, atol=g.h**2)


class TestRecovery:
    def test_scaled_translate(self):
        t = 1.0
        u0 = heat_evolve(gaussian(G), t)
        u1 = heat_evolve(gaussian(G, 1.0, 1.0, 3.0), t)
        ul = heat_evolve(gaussian(G, 0.5, 1.0, math.sqrt(3.0)), t)
        fit = recover_homothety(u0, u1, ul, 0.5)
        assert abs(fit.eta[0] - 1.0) <= G.h
        assert abs(math.log(fit.k) - math.log(3.0)) <= 1e-2
        assert fit.fit_residual <= 1e-2

    def test_identical(self):
        u = heat_evolve(gaussian(G), 1.0)
        fit = recover_homothety(u, u, u, 0.5)
        assert fit.k == pytest.approx(1.0, abs=1e-12)
        assert abs(fit.eta[0]) <= 1e-12
        assert fit.fit_residual <= 1e-10

    def test_non_homothetic(self):
        t = 1.0
        u0 = heat_evolve(gaussian(G), t)
        ind = indicator(G, -1.5, 1.5)
        u1 = heat_evolve(ind * (gaussian(G).mass() / ind.mass()), t)
        fit = recover_homothety(u0, u1, u0, 0.5)
        assert fit.fit_residual > 1e-2

    def test_disjoint_slopes(self):
        g = Grid(1, 4, 81)
        up = GridFn(g, np.exp(g.axis - 4))
        down = GridFn(g, np.exp(-g.axis - 4))
        with pytest.raises(ValueError):
            recover_homothety(up, down, up, 0.5)


class TestDiagnostics:
    def test_harmonic_mean_of_equal_negatives(self):
        assert harmonic_mean_matrix(-0.7, -0.7, 0.3)[0, 0] == pytest.approx(-0.7, rel=1e-15)
        X = np.array([[-2.0, 0.3], [0.3, -1.0]])
        np.testing.assert_allclose(harmonic_mean_matrix(X, X, 0.4), X, rtol=1e-14)

    def test_gaussian_equality(self):
        t = 1.0
        u0, u1, ul = (heat_evolve(gaussian(G, c), t) for c in (0.0, 1.0, 0.5))
        d = matrix_equality_diagnostics(u0, u1, ul, 0.5, np.linspace(-3, 3, 11))
        assert len(d.margin) >= 9
        expected = -2 / (1 + 4 * t)
        np.testing.assert_allclose(d.X1[:, 0, 0], expected, atol=1e-3)
        np.testing.assert_allclose(d.Y[:, 0, 0], expected, atol=1e-3)
        assert np.max(np.abs(d.margin)) <= 1e-8
        assert np.max(d.rigidity) <= 1e-8

    def test_non_equality_rigidity(self):
        t = 1.0
        u0 = heat_evolve(gaussian(G), t)
        u1 = heat_evolve(gaussian(G, 0.0, 2.0), t)
        from bbllab.convolution import minimal_h
        ul = minimal_h(u0, u1, 0.5, 0.0)
        d = matrix_equality_diagnostics(u0, u1, ul, 0.5, np.linspace(-2, 2, 9))
        assert np.max(d.rigidity) > 0.05
        assert np.all(d.trace_gap >= -1e-8)

    def test_far_points_skipped(self, tmp_path):
        u = heat_evolve(gaussian(G), 1.0)
        d = matrix_equality_diagnostics(u, u, u, 0.5, [0.0, 9.99])
        assert d.skipped == 1 and len(d.margin) == 1
        d.to_csv(tmp_path / "d.csv")
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x_star,x1,x2,margin,trace_gap,rigidity"


class TestPipeline:
    def test_gaussian_triple(self):
        tri = BBLTriple.make(gaussian(G), gaussian(G, 1.0), gaussian(G, 0.5), 0.5, 0)
        rep = equality_pipeline(tri)
        assert rep.certified
        assert rep.k == pytest.approx(1.0, abs=1e-6)
        assert rep.eta[0] == pytest.approx(1.0, abs=G.h)

    def test_scaled_triple(self):
        f = gaussian(G)
        tri = BBLTriple.make(f, gaussian(G, 1.0, 1.0, 3.0), gaussian(G, 0.5, 1.0, math.sqrt(3.0)), 0.5, 0)
        rep = equality_pipeline(tri)
        assert rep.certified
        assert rep.k == pytest.approx(3.0, rel=1e-6)
        assert rep.eta[0] == pytest.approx(1.0, abs=G.h)

    def test_strict_inequality_rejected(self):
        g = Grid(1, 4, 161)
        tri = BBLTriple.make(indicator(g, 0, 1), indicator(g, 0, 2), indicator(g, 0, 1.5), 0.5, 0)
        with pytest.raises(ValueError):
            equality_pipeline(tri)

    def test_nonzero_exponent_rejected(self):
        tri = BBLTriple.make(gaussian(G), gaussian(G, 1.0), gaussian(G, 0.5), 0.5, -0.25)
        with pytest.raises(ValueError):
            equality_pipeline(tri)

    def test_compact_homothety(self):
        base = lambda x: np.clip(1 - (x / 2) ** 2, 0, None) ** 3
        k, eta, lam = 2.0, 0.8, 0.25
        tri = BBLTriple.make(GridFn.from_function(G, base), GridFn.from_function(G, lambda x: k * base(x - eta)),
                             GridFn.from_function(G, lambda x: k**lam * base(x - lam * eta)), lam, 0)
        rep = equality_pipeline(tri)
        assert rep.certified
        assert rep.k == pytest.approx(k, rel=2e-2)
        assert abs(rep.eta[0] - eta) <= 2 * G.h

    def test_two_dimensional_homothety(self):
        g = Grid(2, 6, 61)
        shift = np.array([1.0, -0.6])
        tri = BBLTriple.make(gaussian(g), gaussian(g, shift, 1.0, 2.0), gaussian(g, shift / 2, 1.0, math.sqrt(2)),
                             0.5, 0)
        rep = equality_pipeline(tri)
        assert rep.certified
        assert rep.k == pytest.approx(2.0, rel=2e-2)
        np.testing.assert_allclose(rep.eta, shift, atol=2 * g.h)

    def test_json(self, tmp_path):
        tri = BBLTriple.make(gaussian(G), gaussian(G, 1.0), gaussian(G, 0.5), 0.5, 0)
        equality_pipeline(tri).to_json(tmp_path / "e.json")
        data = json.loads((tmp_path / "e.json").read_text())
        assert {"t_star", "sigma", "k", "eta", "fit_residual", "certified"} <= set(data)
        assert data["certified"] is True
