import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from extremile import DomainError, EvaluationError, basis_moment, h_weight, j_weight, sample_extremile
from extremile.basis import normal_rayleigh, polynomial
from extremile.quadrature import gauss_legendre
from extremile.weights import WeightMeasure, j_weighted_rule, r_exponent, s_exponent

LEVELS = np.round(np.arange(0.05, 0.951, 0.05), 2)
levels = st.floats(0.01, 0.99)
unit = st.floats(0.0, 1.0)


class TestExponents:
    def test_equal_one_at_half(self):
        assert r_exponent(0.5) == 1.0
        assert s_exponent(0.5) == 1.0

    def test_r_increasing_on_upper_half(self):
        r = [r_exponent(t) for t in np.linspace(0.5, 0.99, 50)]
        assert np.all(np.diff(r) > 0)

    def test_s_increasing_as_tau_decreases(self):
        s = [s_exponent(t) for t in np.linspace(0.5, 0.01, 50)]
        assert np.all(np.diff(s) > 0)

    def test_r_at_09(self):
        assert_allclose(r_exponent(0.9), 6.5788, atol=1e-4)

    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5])
    def test_domain(self, tau):
        with pytest.raises(DomainError):
            WeightMeasure(tau)


class TestHWeight:
    @given(levels)
    def test_endpoints(self, tau):
        assert h_weight(0.0, tau) == 0.0
        assert_allclose(h_weight(1.0, tau), 1.0, atol=1e-15)

    @given(levels)
    def test_half_at_own_level(self, tau):
        assert_allclose(h_weight(tau, tau), 0.5, rtol=1e-12)

    def test_h_09_09(self):
        assert_allclose(h_weight(0.9, 0.9), 0.5, rtol=1e-12)

    def test_h_05_09_high_precision(self):
        mpmath.mp.dps = 40
        oracle = mpmath.power(0.5, mpmath.log(0.5) / mpmath.log(mpmath.mpf("0.9")))
        assert_allclose(h_weight(0.5, 0.9), float(oracle), rtol=1e-13)
        assert_allclose(h_weight(0.5, 0.9), 0.01046, atol=5e-6)

    def test_branches_meet_at_half(self):
        t = np.linspace(0, 1, 11)
        assert_allclose(h_weight(t, 0.5), t, atol=1e-15)
        assert_allclose(h_weight(t, 0.5 - 1e-12), t, atol=1e-9)

    def test_monotone_random_triples(self, rng):
        t = np.sort(rng.uniform(size=(1000, 2)), axis=1)
        taus = rng.uniform(0.01, 0.99, 1000)
        for (t1, t2), tau in zip(t, taus):
            assert h_weight(t1, tau) <= h_weight(t2, tau)

    @pytest.mark.parametrize("t", [-0.01, 1.01, np.nan])
    def test_domain(self, t):
        with pytest.raises(DomainError):
            h_weight(t, 0.3)


class TestJWeight:
    def test_uniform_at_half(self):
        assert_allclose(j_weight(np.linspace(0, 1, 7), 0.5), 1.0)

    def test_finite_difference_oracle(self):
        step = 1e-6
        fd = (h_weight(0.5 + step, 0.9) - h_weight(0.5 - step, 0.9)) / (2 * step)
        assert_allclose(j_weight(0.5, 0.9), fd, rtol=1e-8)
        assert_allclose(j_weight(0.5, 0.9), 0.1376, atol=5e-5)

    @pytest.mark.parametrize("t", [0.1, 0.5, 0.9])
    def test_mirror(self, t):
        assert_allclose(j_weight(1 - t, 0.1), j_weight(t, 0.9), rtol=1e-12)

    @given(unit, levels)
    def test_symmetry(self, t, tau):
        # 1 - t is rounded, so compare on an absolute scale as well
        assert_allclose(j_weight(t, tau), j_weight(1 - t, 1 - tau), rtol=1e-10, atol=1e-12)

    @given(unit, levels)
    def test_bounded_and_nonnegative(self, t, tau):
        v = j_weight(t, tau)
        assert 0.0 <= v <= WeightMeasure(tau).exponent + 1e-12

    @pytest.mark.parametrize("tau", LEVELS)
    def test_default_rule_integrates_to_one(self, tau):
        m = basis_moment(polynomial(0), tau)
        assert_allclose(m.values[0], 1.0, atol=1e-12)

    @pytest.mark.parametrize("tau", LEVELS)
    def test_integrates_to_one_gauss_legendre_99(self, tau):
        # fails for 0.35 <= tau <= 0.65: J has a fractional-power endpoint singularity
        g = gauss_legendre(99)
        assert abs(g.integrate(j_weight(g.nodes, tau)) - 1.0) < 1e-8

    @pytest.mark.parametrize("tau", [0.45, 0.55])
    def test_exact_integral_is_one(self, tau):
        mpmath.mp.dps = 30
        val = mpmath.quad(lambda t: j_weight(float(t), tau), [0, 0.5, 1])
        assert_allclose(float(val), 1.0, atol=1e-10)


class TestSampleExtremile:
    def test_mean_at_half(self):
        assert sample_extremile([1.0, 2.0, 3.0], 0.5) == 2.0

    def test_two_points(self):
        assert_allclose(sample_extremile([0.0, 1.0], 0.9), 1 - h_weight(0.5, 0.9), rtol=1e-14)
        assert_allclose(sample_extremile([0.0, 1.0], 0.9), 0.98954, atol=1e-5)

    def test_uniform_closed_form(self):
        y = np.random.default_rng(7).uniform(size=10**6)
        r = r_exponent(0.9)
        assert_allclose(sample_extremile(y, 0.9), r / (r + 1), atol=1e-3)
        assert_allclose(r / (r + 1), 0.8681, atol=1e-4)

    def test_max_of_two(self):
        y = np.random.default_rng(8).uniform(size=10**6)
        assert_allclose(sample_extremile(y, 0.5 ** 0.5), 2 / 3, atol=2e-3)
        assert_allclose(sample_extremile(y, 1 - 0.5 ** 0.5), 1 / 3, atol=2e-3)

    def test_empty(self):
        with pytest.raises(DomainError):
            sample_extremile([], 0.5)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), levels,
           st.floats(0.01, 100), st.floats(-100, 100))
    def test_affine_equivariance(self, ys, tau, a, b):
        ys = np.array(ys)
        lhs = sample_extremile(a * ys + b, tau)
        rhs = a * sample_extremile(ys, tau) + b
        assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * (1 + abs(a) * np.abs(ys).max() + abs(b)))

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40))
    def test_monotone_in_tau_and_bounded(self, ys):
        vals = [sample_extremile(ys, t) for t in np.linspace(0.02, 0.98, 25)]
        tol = 1e-9 * (1 + np.abs(ys).max())
        assert np.all(np.diff(vals) >= -tol)
        assert min(ys) - tol <= vals[0] and vals[-1] <= max(ys) + tol


class TestBasisMoment:
    def test_polynomial_at_half(self):
        assert_allclose(basis_moment(polynomial(3), 0.5).values, [1, 1 / 2, 1 / 3, 1 / 4], rtol=1e-13)

    def test_polynomial_at_09(self):
        r = r_exponent(0.9)
        expected = [r / (r + k) for k in range(4)]
        m = basis_moment(polynomial(3), 0.9).values
        assert_allclose(m, expected, rtol=1e-12)
        assert_allclose(m, [1, 0.8681, 0.7669, 0.6869], atol=1e-4)

    @pytest.mark.parametrize("tau", [0.1, 0.37, 0.5, 0.9])
    @pytest.mark.parametrize("basis", [polynomial(3), normal_rayleigh()])
    def test_constant_column(self, tau, basis):
        assert_allclose(basis_moment(basis, tau).values[0], 1.0, atol=1e-8)

    def test_rules_agree(self):
        b = normal_rayleigh()
        ref = basis_moment(b, 0.3).values
        assert_allclose(basis_moment(b, 0.3, "gl:99").values, ref, rtol=1e-4)

    def test_uniform_rule_is_riemann_sum(self):
        n = 400
        u = np.arange(1, n + 1) / n
        expected = (u[:, None] ** np.arange(4) * j_weight(u, 0.7)[:, None]).mean(axis=0)
        assert_allclose(basis_moment(polynomial(3), 0.7, f"uniform:{n}").values, expected, rtol=1e-13)

    def test_nonfinite_names_node(self):
        with pytest.raises(EvaluationError, match="u=1"):
            basis_moment(normal_rayleigh(clip=0.0), 0.5, "uniform:10")

    def test_gauss_jacobi_exact_for_polynomials(self):
        g = j_weighted_rule(0.8, 5)
        r = r_exponent(0.8)
        for k in range(10):
            assert_allclose(g.integrate(g.nodes ** k), r / (r + k), rtol=1e-12)

    def test_btilde(self):
        m = basis_moment(polynomial(1), 0.5)
        assert_allclose(m.btilde(2), [[1, 0], [0, 1], [0.5, 0], [0, 0.5]])
