"""Fisher-scoring GLM kernel: oracles, ascent, bounds, failure modes."""

import numpy as np
import pytest

from bintensor.glm import GlmProblem, NonFinite, SingularDesign, fit_glm, fit_glm_rows
from bintensor.links import make_link

LOGISTIC = make_link("logistic", 1.0)


def random_problem(rng, n=12, r=3, link=LOGISTIC):
    X = rng.standard_normal((n, r))
    beta = rng.standard_normal(r)
    y = (rng.random(n) < link.f(X @ beta)).astype(float)
    return GlmProblem(X, y, link)


def grid_max_loglik(problem, lim=3.0, steps=201):
    grid = np.linspace(-lim, lim, steps)
    B1, B2 = np.meshgrid(grid, grid, indexing="ij")
    X, y = problem.design, problem.response
    etas = X[:, 0][None, None, :] * B1[..., None] + X[:, 1][None, None, :] * B2[..., None]
    return problem.link.log_f_signed(y[None, None, :], etas).sum(axis=-1).max()


class TestFitGlm:
    def test_balanced_intercept_is_exact_zero(self):
        p = GlmProblem(np.ones((4, 1)), np.array([1.0, 0, 1, 0]), LOGISTIC)
        sol = fit_glm(p, np.zeros(1))
        assert sol.coef[0] == 0.0
        assert sol.converged
        assert sol.loglik == pytest.approx(4 * np.log(0.5), rel=1e-15)

    def test_perfect_separation_runs_to_cap(self):
        p = GlmProblem(np.ones((4, 1)), np.ones(4), LOGISTIC)
        sol = fit_glm(p, np.zeros(1))
        assert sol.iterations == 100
        assert not sol.converged
        assert not sol.hit_bound
        assert sol.coef[0] > 20.0

    def test_bound_projection(self):
        p = GlmProblem(np.ones((4, 1)), np.ones(4), LOGISTIC, coef_bound=5.0)
        sol = fit_glm(p, np.zeros(1))
        assert sol.hit_bound
        assert abs(sol.coef[0]) == pytest.approx(5.0, abs=1e-9)
        assert abs(sol.coef[0]) <= 5.0 + 1e-8

    def test_beats_grid_oracle(self):
        rng = np.random.default_rng(21)
        checked = 0
        while checked < 8:
            X = rng.standard_normal((8, 2))
            y = (rng.random(8) < 0.5).astype(float)
            if y.min() == y.max():
                continue
            p = GlmProblem(X, y, LOGISTIC)
            sol = fit_glm(p, np.zeros(2))
            assert sol.loglik >= grid_max_loglik(p) - 1e-8
            checked += 1

    @pytest.mark.parametrize("family", ["logistic", "probit", "laplacian"])
    def test_gradient_small_at_convergence(self, family):
        link = make_link(family, 1.0)
        rng = np.random.default_rng(31)
        for _ in range(5):
            p = random_problem(rng, n=60, r=3, link=link)
            sol = fit_glm(p, np.zeros(3))
            if not sol.converged:
                continue
            g = p.link.score(p.response, p.design @ sol.coef) @ p.design
            assert np.abs(g).max() <= 1e-6 * len(p.response)

    def test_matches_independent_gradient_ascent(self):
        # canonical link: Fisher scoring is Newton; cross-check against a
        # plain backtracking gradient ascent on the same objective
        rng = np.random.default_rng(41)
        p = random_problem(rng, n=40, r=2)
        sol = fit_glm(p, np.zeros(2))

        def ll(beta):
            return p.link.log_f_signed(p.response, p.design @ beta).sum()

        beta = np.zeros(2)
        for _ in range(5000):
            g = p.link.score(p.response, p.design @ beta) @ p.design
            step = 1.0
            while ll(beta + step * g) < ll(beta) and step > 1e-12:
                step *= 0.5
            beta = beta + step * g
            if np.linalg.norm(g) < 1e-10:
                break
        np.testing.assert_allclose(sol.coef, beta, atol=1e-6)

    def test_flip_equivariance_exact(self):
        rng = np.random.default_rng(51)
        for _ in range(10):
            p = random_problem(rng)
            flipped = GlmProblem(p.design, 1.0 - p.response, p.link)
            a = fit_glm(p, np.zeros(3))
            b = fit_glm(flipped, np.zeros(3))
            assert np.array_equal(a.coef, -b.coef)
            assert a.loglik == b.loglik
            assert a.iterations == b.iterations

    def test_masked_entries_are_inert(self):
        rng = np.random.default_rng(61)
        X = rng.standard_normal((20, 2))
        y = (rng.random(20) < 0.5).astype(float)
        obs = rng.random(20) < 0.7
        obs[:2] = True
        base = fit_glm(GlmProblem(X, y, LOGISTIC, observed=obs), np.zeros(2))
        y2 = y.copy()
        y2[~obs] = 1.0 - y2[~obs]
        perturbed = fit_glm(GlmProblem(X, y2, LOGISTIC, observed=obs), np.zeros(2))
        assert np.array_equal(base.coef, perturbed.coef)

    def test_singular_design_on_saturated_information(self):
        # deep in the probit tail the weights underflow to exactly zero
        # while the score does not: the Fisher matrix is singular
        link = make_link("probit", 1.0)
        p = GlmProblem(np.ones((3, 1)), np.zeros(3), link)
        with pytest.raises(SingularDesign):
            fit_glm(p, np.array([50.0]))

    def test_non_finite_init_rejected(self):
        p = GlmProblem(np.ones((3, 1)), np.ones(3), LOGISTIC)
        with pytest.raises(ValueError):
            fit_glm(p, np.array([np.nan]))

    def test_non_finite_overflow_detected(self):
        p = GlmProblem(np.full((3, 1), 1e200), np.ones(3), LOGISTIC)
        with pytest.raises((NonFinite, SingularDesign)):
            fit_glm(p, np.array([1e200]))

    def test_response_validation(self):
        with pytest.raises(ValueError):
            fit_glm(GlmProblem(np.ones((2, 1)), np.array([0.5, 1.0]), LOGISTIC), np.zeros(1))

    def test_observed_requires_nonempty_rows(self):
        with pytest.raises(ValueError):
            fit_glm(GlmProblem(np.ones((2, 1)), np.ones(2), LOGISTIC, observed=np.zeros(2, bool)), np.zeros(1))


class TestBatch:
    def test_batch_matches_single_rows(self):
        # BLAS kernels differ between (m, n) and (1, n) matmuls, so the
        # agreement is to rounding, not bitwise
        rng = np.random.default_rng(71)
        X = rng.standard_normal((15, 2))
        Y = (rng.random((6, 15)) < 0.5).astype(float)
        batch = fit_glm_rows(X, Y, LOGISTIC, np.zeros((6, 2)))
        for j in range(6):
            single = fit_glm(GlmProblem(X, Y[j], LOGISTIC), np.zeros(2))
            np.testing.assert_allclose(batch.coef[j], single.coef, rtol=1e-9, atol=1e-12)
            assert batch.loglik[j] == pytest.approx(single.loglik, rel=1e-12)
            assert batch.converged[j] == single.converged

    def test_row_order_independence(self):
        rng = np.random.default_rng(81)
        X = rng.standard_normal((15, 2))
        Y = (rng.random((6, 15)) < 0.5).astype(float)
        perm = np.array([3, 1, 5, 0, 4, 2])
        a = fit_glm_rows(X, Y, LOGISTIC, np.zeros((6, 2)))
        b = fit_glm_rows(X, Y[perm], LOGISTIC, np.zeros((6, 2)))
        np.testing.assert_array_equal(a.coef[perm], b.coef)
