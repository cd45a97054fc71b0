import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bbllab.gridfn import (Grid, GridFn, cap, check_alpha_concavity, from_csv, gaussian, indicator,
                           j_crossover_radius, j_formula, k_crossover_radius, mass, mollifier_constant, mollify,
                           to_csv, truncate_J, truncate_K, two_bumps)

G1 = Grid(1, 8, 1601)


def l1(a: GridFn, b: GridFn) -> float:
    return mass(GridFn(a.grid, np.abs(a.values - b.values)))


def random_fn(grid, seed):
    rng = np.random.default_rng(seed)
    return GridFn(grid, rng.uniform(0, 2, grid.shape))


class TestGrid:
    def test_nodes_symmetric(self):
        g = Grid(1, 2.0, 9)
        np.testing.assert_allclose(g.axis, -g.axis[::-1], atol=1e-15)
        assert g.axis[g.center] == 0.0
        assert g.h == 0.5

    def test_even_count_rejected(self):
        with pytest.raises(ValueError):
            Grid(1, 1.0, 10)

    def test_dimension_three_rejected(self):
        with pytest.raises(ValueError):
            Grid(3, 1.0, 11)

    def test_two_dimensional_coords(self):
        X, Y = Grid(2, 1.0, 5).coords()
        assert X.shape == (5, 5)
        assert X[4, 0] == 1.0 and Y[0, 4] == 1.0

    def test_negative_values_rejected(self):
        with pytest.raises(ValueError):
            GridFn(Grid(1, 1.0, 3), [0.0, -1.0, 0.0])

    def test_values_immutable(self):
        f = gaussian(Grid(1, 1.0, 5))
        with pytest.raises(ValueError):
            f.values[0] = 2.0


class TestMass:
    def test_constant(self):
        g = Grid(1, 1.0, 201)
        assert mass(GridFn(g, np.ones(g.shape))) == pytest.approx(2.0, rel=1e-15)

    def test_gaussian(self):
        assert mass(gaussian(G1)) == pytest.approx(math.sqrt(math.pi), abs=1e-9)

    def test_zero(self):
        assert mass(GridFn(G1, np.zeros(G1.shape))) == 0.0

    def test_two_dimensional_gaussian(self):
        assert mass(gaussian(Grid(2, 8, 321))) == pytest.approx(math.pi, rel=1e-12)

    def test_exact_for_piecewise_linear(self):
        g = Grid(1, 1.0, 11)
        tent = GridFn(g, np.maximum(1 - np.abs(g.axis), 0))
        assert mass(tent) == pytest.approx(1.0, rel=1e-15)

    @given(st.integers(0, 10**6), st.floats(0, 10), st.floats(0, 10))
    def test_linear(self, seed, a, b):
        g = Grid(1, 3.0, 61)
        f, k = random_fn(g, seed), random_fn(g, seed + 1)
        combo = GridFn(g, a * f.values + b * k.values)
        assert mass(combo) == pytest.approx(a * mass(f) + b * mass(k), rel=1e-12, abs=1e-14)


class TestMollify:
    def test_constant_reproduced_inside(self):
        g = Grid(1, 2.0, 401)
        out = mollify(GridFn(g, np.ones(g.shape)), 0.1)
        inside = np.abs(g.axis) <= 2.0 - 0.1
        np.testing.assert_allclose(out.values[inside], 1.0, rtol=1e-14)

    def test_constant_two_dimensional(self):
        g = Grid(2, 1.0, 41)
        out = mollify(GridFn(g, np.ones(g.shape)), 0.2)
        np.testing.assert_allclose(out.values[5:-5, 5:-5], 1.0, rtol=1e-14)

    def test_normalization_constants(self):
        # 1 / int exp(-1/(1-|x|^2)) over the unit ball, by 30-digit quadrature
        assert mollifier_constant(1) == pytest.approx(2.25228362104358101, abs=1e-10)
        assert mollifier_constant(2) == pytest.approx(2.14356577579223660, abs=1e-10)

    def test_indicator_support_arithmetic(self):
        g = Grid(1, 2.0, 801)
        out = mollify(indicator(g, -1, 1), 0.1).values
        x = g.axis
        np.testing.assert_allclose(out[np.abs(x) <= 0.9 + 1e-9], 1.0, rtol=1e-13)
        assert np.all(out[np.abs(x) >= 1.1 - 1e-9] == 0.0)

    def test_mass_preserved(self):
        g = Grid(1, 4.0, 801)
        f = gaussian(g, 0, 0.5)
        assert mass(mollify(f, 0.3)) == pytest.approx(mass(f), rel=1e-6)

    def test_nonpositive_eps(self):
        with pytest.raises(ValueError):
            mollify(gaussian(G1), 0.0)


class TestCap:
    def test_constant(self):
        g = Grid(1, 1.0, 11)
        np.testing.assert_array_equal(cap(GridFn(g, 5 * np.ones(11)), 3.0).values, 3.0)

    def test_above_max_is_identity(self):
        f = gaussian(G1)
        np.testing.assert_array_equal(cap(f, 10.0).values, f.values)

    def test_half_level_mass(self):
        # sqrt(pi) erf(8) minus the excess over 1/2 on |x| < sqrt(log 2), 30-digit reference;
        # the trapezoid loses O(h^2) at the two kinks
        assert mass(cap(gaussian(G1), 0.5)) == pytest.approx(1.25622760764661445, abs=5e-6)

    @given(st.floats(0.01, 2), st.floats(0.01, 2))
    def test_monotone_in_level(self, l1_, l2_):
        f = gaussian(Grid(1, 3.0, 61), 0, 1, 1.5)
        lo, hi = sorted((l1_, l2_))
        assert np.all(cap(f, lo).values <= cap(f, hi).values)


class TestTruncateJ:
    def test_pointwise_formula(self):
        # alpha = -1 lies outside the operator's range, so check the formula itself
        assert j_formula(0.0, 0.0, 0.1, 1.0, -1.0, -0.1) == pytest.approx(0.1)
        g = Grid(1, 1.0, 3)
        out = truncate_J(GridFn(g, np.zeros(3)), 0.1, 1.0, -0.25, -0.1)
        assert out.at_origin() == pytest.approx(min(0.1, 0.1**-0.1))

    def test_crossover_radius(self):
        assert j_crossover_radius(1e-3, -0.25, -0.1) == pytest.approx(5.68343917568614540, rel=1e-12)

    def test_l1_distance_decreases(self):
        f = gaussian(G1)
        d = [l1(truncate_J(f, delta, 1.0, -1 / 16, -2.0), f) for delta in (1e-1, 1e-2, 1e-3)]
        assert d[0] > d[1] > d[2]
        assert d[2] < 1e-2

    def test_tail_exponent_and_positivity(self):
        out = truncate_J(gaussian(G1), 1e-3, 1.0, -0.25, -0.1)
        assert out.tail_exponent == -4.0
        assert np.all(out.values > 0)
        far = G1.axis > j_crossover_radius(1e-3, -0.25, -0.1) + 3
        np.testing.assert_allclose(out.values[far], 1e-3**-0.1 * (1 + G1.axis[far]) ** -4, rtol=1e-12)

    @pytest.mark.parametrize("alpha, beta", [(-1.5, -0.1), (0.1, -0.1), (-0.25, 0.1), (-0.9, -0.5)])
    def test_constraints(self, alpha, beta):
        with pytest.raises(ValueError):
            truncate_J(gaussian(G1), 1e-2, 1.0, alpha, beta)

    @given(st.integers(0, 10**6), st.floats(1e-4, 0.5), st.floats(1, 3))
    def test_structure_and_monotone(self, seed, delta, c):
        g = Grid(1, 3.0, 61)
        f, k = random_fn(g, seed), random_fn(g, seed + 1)
        lo = GridFn(g, np.minimum(f.values, k.values))
        alpha, beta = -0.25, -0.5
        Jf = truncate_J(f, delta, c, alpha, beta).values
        env = delta**beta * (1 + np.abs(g.axis)) ** (1 / alpha)
        assert np.all(Jf >= np.minimum(f.values, env))
        below = f.values < env
        assert np.all(Jf[below] - f.values[below] <= c * delta * (1 + 1e-12))
        assert np.all(truncate_J(lo, delta, c, alpha, beta).values <= Jf)


class TestTruncateK:
    def test_pointwise_formula(self):
        g = Grid(1, 1.0, 3)
        out = truncate_K(GridFn(g, np.zeros(3)), 0.01, 1.0, 1.0, -0.5)
        assert out.at_origin() == pytest.approx(0.01)

    def test_crossover_radius(self):
        assert k_crossover_radius(0.01, 1.0, -0.5) == pytest.approx(6.90775527898213702, rel=1e-12)

    def test_l1_distance_small(self):
        f = indicator(G1, -1, 1)
        d = [l1(truncate_K(f, delta, 1.0, 1.0, -0.5), f) for delta in (1e-2, 1e-3, 1e-4)]
        assert d[0] > d[1] > d[2]
        assert d[2] < 1e-2

    def test_beta_range(self):
        with pytest.raises(ValueError):
            truncate_K(gaussian(G1), 0.01, 0.5, 1.0, -0.6)

    @given(st.integers(0, 10**6), st.floats(1e-4, 0.5))
    def test_monotone_and_positive(self, seed, delta):
        g = Grid(1, 3.0, 61)
        f, k = random_fn(g, seed), random_fn(g, seed + 1)
        lo = GridFn(g, np.minimum(f.values, k.values))
        Kf = truncate_K(f, delta, 1.0, 1.0, -0.5).values
        assert np.all(Kf > 0)
        assert np.all(truncate_K(lo, delta, 1.0, 1.0, -0.5).values <= Kf)


class TestConcavity:
    def test_gaussian_log_concave(self):
        assert check_alpha_concavity(gaussian(Grid(1, 5, 201)), 0.0).passed

    def test_indicator_quasi_concave(self):
        g = Grid(1, 3, 121)
        assert check_alpha_concavity(indicator(g, -1, 1, edge="closed"), math.inf).passed

    def test_log_convex_fails_at_ends(self):
        g = Grid(1, 2.0, 81)
        rep = check_alpha_concavity(GridFn(g, np.exp(g.axis**2)), 0.0)
        assert not rep.passed
        y, z, mid = rep.witness
        assert (y, z, mid) == (-2.0, 2.0, 0.0)
        # brute force over all symmetric pairs: sqrt(e^4 e^4) - e^0
        assert rep.worst_violation == pytest.approx(math.e**4 - 1, rel=1e-12)

    def test_two_bumps_not_log_concave(self):
        assert not check_alpha_concavity(two_bumps(Grid(1, 5, 201)), 0.0).passed

    def test_two_dimensional(self):
        g = Grid(2, 3.0, 21)
        assert check_alpha_concavity(gaussian(g), 0.0, 1e-12).passed
        assert not check_alpha_concavity(two_bumps(g, 3.0), 0.0).passed

    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_monotone_in_alpha(self, a1, a2):
        g = Grid(1, 3.0, 61)
        f = GridFn(g, np.maximum(1 - g.axis**2 / 4, 0) ** 3)
        lo, hi = sorted((a1, a2))
        if check_alpha_concavity(f, hi, 1e-12).passed:
            assert check_alpha_concavity(f, lo, 1e-12).passed


class TestCsv:
    @pytest.mark.parametrize("grid", [Grid(1, 3.0, 31), Grid(2, 1.5, 7)])
    def test_round_trip_is_exact(self, tmp_path, grid):
        f = GridFn(grid, np.random.default_rng(3).uniform(0, 1, grid.shape) * math.pi)
        path = tmp_path / "f.csv"
        to_csv(f, path)
        back = from_csv(path)
        assert back.grid == grid
        np.testing.assert_array_equal(back.values, f.values)

    def test_header(self, tmp_path):
        to_csv(gaussian(Grid(2, 1.0, 3)), tmp_path / "g.csv")
        assert (tmp_path / "g.csv").read_text().splitlines()[0] == "x,y,value"
