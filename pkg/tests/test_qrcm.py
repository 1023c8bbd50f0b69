import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy.optimize import minimize
from scipy.stats import norm

from extremile import (ConvergenceError, DesignError, DomainError, FitOptions, LabeledData, eval_quantile,
                       fit_qrcm, integrated_loss, score)
from extremile.basis import normal_rayleigh, polynomial
from extremile.qrcm import check_monotonicity, unvec, vec

from conftest import model_a_sample

FIXED = dict(kappa0=1e-2, kappa_min=1e-4)


@pytest.fixture(scope="module")
def sample():
    rng = np.random.default_rng(11)
    return LabeledData(*model_a_sample(rng, n=300))


class TestVec:
    def test_column_stacking(self):
        A = np.array([[1, 2], [3, 4], [5, 6]])
        assert_array_equal(vec(A), [1, 3, 5, 2, 4, 6])
        assert_array_equal(unvec(vec(A), 3, 2), A)

    def test_eval_quantile(self):
        A = np.array([[1.0, 0.0], [0.0, 2.0]])
        assert_allclose(eval_quantile(A, [1.0, 3.0], 0.25, polynomial(1)), 1 + 3 * 2 * 0.25)


class TestLoss:
    def test_closed_forms(self):
        one = LabeledData(np.ones((1, 1)), [1.0])
        zero = LabeledData(np.ones((1, 1)), [0.0])
        a = np.zeros((1, 1))
        assert integrated_loss(zero, a, polynomial(0)) == 0.0
        assert_allclose(integrated_loss(one, a, polynomial(0)), 0.5, rtol=1e-14)
        assert_allclose(score(zero, a, polynomial(0)), [-0.5], rtol=1e-14)

    def test_linear_in_weights(self, sample):
        A = np.random.default_rng(2).normal(size=(3, 4))
        assert_allclose(integrated_loss(sample, A, weights=np.full(sample.n, 2.5)),
                        2.5 * integrated_loss(sample, A), rtol=1e-13)

    @pytest.mark.parametrize("kappa", [0.0, 0.05])
    def test_midpoint_convexity(self, sample, kappa):
        rng = np.random.default_rng(3)
        b = polynomial(3)
        for _ in range(200):
            A1, A2 = rng.normal(size=(2, 3, 4))
            mid = integrated_loss(sample, (A1 + A2) / 2, b, kappa=kappa)
            ends = (integrated_loss(sample, A1, b, kappa=kappa) + integrated_loss(sample, A2, b, kappa=kappa)) / 2
            assert mid <= ends + 1e-10

    def test_score_matches_finite_differences(self, sample):
        b = polynomial(3)
        rng = np.random.default_rng(4)
        A = np.zeros((3, 4))
        A[:, 0] = [1, 2, 3]
        A += 0.1 * rng.normal(size=A.shape)
        kappa, h = 0.05, 1e-6
        g = score(sample, A, b, kappa=kappa)
        fd = np.empty(12)
        for k in range(12):
            e = np.zeros(12)
            e[k] = h
            up = integrated_loss(sample, unvec(vec(A) + e, 3, 4), b, kappa=kappa)
            dn = integrated_loss(sample, unvec(vec(A) - e, 3, 4), b, kappa=kappa)
            fd[k] = (up - dn) / (2 * h)
        assert np.max(np.abs(g - fd)) / sample.n < 1e-4
        assert_allclose(g, fd, rtol=1e-5, atol=1e-5)

    @given(st.floats(1e-4, 1.0))
    def test_smoothing_gap(self, kappa):
        rng = np.random.default_rng(5)
        X, Y = model_a_sample(rng, n=50)
        data = LabeledData(X, Y)
        A = rng.normal(size=(3, 4))
        gap = integrated_loss(data, A, kappa=kappa) - integrated_loss(data, A)
        assert -1e-9 <= gap <= data.n * kappa / 4 + 1e-9

    def test_score_is_weighted_sum(self, sample):
        w = np.random.default_rng(6).uniform(0, 2, sample.n)
        A = np.zeros((3, 4))
        A[0, 0] = 1.0
        lhs = score(sample, A, weights=w)
        rows = [score(LabeledData(sample.X[i:i + 1], sample.Y[i:i + 1]), A) for i in range(sample.n)]
        assert_allclose(lhs, np.asarray(rows).T @ w, atol=1e-10)


class TestFit:
    def test_noiseless_recovery(self, rng):
        X = np.column_stack([np.ones(200), rng.uniform(size=(200, 2))])
        fit = fit_qrcm(LabeledData(X, X @ [1.0, 2.0, 3.0]))
        expected = np.zeros((3, 4))
        expected[:, 0] = [1, 2, 3]
        assert_allclose(fit.alpha, expected, atol=1e-5)

    def test_matches_generic_minimizer(self, rng):
        X = np.ones((80, 1))
        data = LabeledData(X, rng.exponential(size=80))
        b = polynomial(1)
        fit = fit_qrcm(data, b, opts=FitOptions(grid="gl:31"))
        obj = lambda a: integrated_loss(data, a.reshape(1, 2), b, grid="gl:31")
        ref = minimize(obj, [0.0, 1.0], method="Nelder-Mead", options=dict(xatol=1e-10, fatol=1e-12))
        # the smoothed minimizer is within the smoothing gap of the exact minimum
        assert obj(fit.alpha.ravel()) <= ref.fun + data.n * fit.kappa / 4
        assert_allclose(fit.alpha.ravel(), ref.x, atol=1e-3)

    def test_correct_specification_is_consistent(self):
        rng = np.random.default_rng(21)
        n = 20000
        X = np.column_stack([np.ones(n), rng.uniform(size=(n, 2))])
        Y = X @ [1.0, 2.0, 3.0] + 0.5 * rng.standard_normal(n)
        fit = fit_qrcm(LabeledData(X, Y), normal_rayleigh())
        # the two unbounded columns are nearly collinear, so compare quantile functions
        xs = np.array([[1, 0, 0], [1, 0.5, 0.5], [1, 1, 1]])
        u = np.linspace(0.05, 0.95, 19)
        truth = (xs @ [1.0, 2.0, 3.0])[:, None] + 0.5 * norm.ppf(u)[None, :]
        assert_allclose(fit.quantile(xs, u), truth, atol=0.05)

    def test_median_oracle(self, rng):
        Y = rng.standard_normal(201)
        data = LabeledData(np.ones((201, 1)), Y)
        fit = fit_qrcm(data, polynomial(0))
        # the smoothed optimum lies in the kappa-band around the sample median
        assert abs(fit.alpha[0, 0] - np.median(Y)) <= fit.kappa
        a = fit.alpha[0, 0]
        assert np.sum(Y < a - fit.kappa) <= 100 <= np.sum(Y <= a + fit.kappa)

    def test_smoothing_limit_on_median_instance(self, rng):
        data = LabeledData(np.ones((200, 1)), rng.standard_normal(200))
        coarse = fit_qrcm(data, polynomial(0))
        fine = fit_qrcm(data, polynomial(0), opts=FitOptions(kappa_min_scale=1e-4))
        assert np.max(np.abs(coarse.alpha - fine.alpha)) < 1e-3

    def test_identity_quantile_function(self):
        data = LabeledData(np.ones((10**4, 1)), (np.arange(10**4) + 0.5) / 10**4)
        assert_allclose(fit_qrcm(data, polynomial(1)).alpha, [[0.0, 1.0]], atol=0.01)

    @pytest.mark.parametrize("c", [0.1, 3.0, 100.0])
    def test_scale_equivariance(self, sample, c):
        base = fit_qrcm(sample)
        scaled = fit_qrcm(LabeledData(sample.X, c * sample.Y))
        assert_allclose(scaled.alpha, c * base.alpha, rtol=1e-6, atol=1e-9 * c)

    def test_shift_equivariance(self, sample):
        gamma = np.array([0.5, -1.0, 2.0])
        base = fit_qrcm(sample)
        shifted = fit_qrcm(LabeledData(sample.X, sample.Y + sample.X @ gamma))
        expected = base.alpha.copy()
        expected[:, 0] += gamma
        assert_allclose(shifted.alpha, expected, atol=1e-5)

    def test_deterministic(self, sample):
        assert_array_equal(fit_qrcm(sample).alpha, fit_qrcm(sample).alpha)

    def test_integer_weights_replicate_rows(self, sample):
        w = np.random.default_rng(8).integers(1, 4, sample.n).astype(float)
        opts = FitOptions(**FIXED)
        weighted = fit_qrcm(sample, weights=w, opts=opts)
        rep = np.repeat(np.arange(sample.n), w.astype(int))
        rdata = LabeledData(sample.X[rep], sample.Y[rep])
        replicated = fit_qrcm(rdata, opts=opts)
        # same objective, so both must attain the same minimum value
        at_w = integrated_loss(sample, weighted.alpha, weights=w, kappa=1e-4)
        at_r = integrated_loss(sample, replicated.alpha, weights=w, kappa=1e-4)
        assert_allclose(at_w, at_r, rtol=1e-7)
        assert_allclose(at_r, integrated_loss(rdata, replicated.alpha, kappa=1e-4), rtol=1e-12)

    def test_gradient_small_at_solution(self, sample):
        fit = fit_qrcm(sample)
        g = score(sample, fit.alpha, weights=fit.weights, kappa=fit.kappa)
        assert np.max(np.abs(g)) / sample.n <= 1e-6

    def test_rank_deficient(self, rng):
        x = rng.uniform(size=50)
        X = np.column_stack([np.ones(50), x, x])
        with pytest.raises(DesignError):
            fit_qrcm(LabeledData(X, x + rng.normal(size=50)))

    def test_small_n_warns(self, rng):
        X = np.column_stack([np.ones(10), rng.uniform(size=10)])
        with pytest.warns(UserWarning, match="does not exceed"):
            try:
                fit_qrcm(LabeledData(X, rng.normal(size=10)), polynomial(5))
            except ConvergenceError:
                pass

    def test_convergence_error_carries_iterate(self, sample):
        with pytest.raises(ConvergenceError) as info:
            fit_qrcm(sample, opts=FitOptions(max_iter=1))
        assert info.value.best.shape == (3, 4)
        assert np.isfinite(info.value.grad_norm)

    def test_weight_length(self, sample):
        with pytest.raises(DomainError):
            fit_qrcm(sample, weights=np.ones(3))

    def test_negative_weights_flagged(self, sample):
        w = np.ones(sample.n)
        w[:5] = -0.2
        fit = fit_qrcm(sample, weights=w)
        assert fit.nonconvex
        assert not fit_qrcm(sample, weights=w, opts=FitOptions(floor_weights=True)).nonconvex

    @pytest.mark.parametrize("bad", [dict(grad_tol=0), dict(kappa0=1e-5, kappa_min=1e-3),
                                     dict(continuation_factor=1.0), dict(max_iter=0)])
    def test_options_validated(self, bad):
        with pytest.raises(DomainError):
            FitOptions(**bad)


class TestMonotonicity:
    def test_monotone_fit(self, sample):
        assert fit_qrcm(sample).monotonicity.ok

    def test_crossing_reported(self):
        A = np.array([[0.0, -1.0]])
        rep = check_monotonicity(A, polynomial(1), np.ones((1, 1)), "gl:5")
        assert rep.fraction == 1.0 and not rep.ok
        assert len(rep.worst) == 5 and all(s == -1.0 for _, _, s in rep.worst)
