"""Alternating decomposition: likelihood, mode updates, line search,
normalization, multi-start fitting, BIC, rank selection."""

import dataclasses

import numpy as np
import pytest

import bintensor.decomp as decomp
from bintensor.decomp import (
    AllStartsFailed,
    DegenerateColumn,
    FitConfig,
    bic,
    effective_params,
    fit,
    line_search,
    log_likelihood,
    normalize,
    predict_proba,
    select_rank,
    update_mode,
)
from bintensor.links import make_link
from bintensor.sim import gen_cp_signal, quantize_latent
from bintensor.tensor_ops import BinaryTensor, CpFactors, cp_reconstruct, max_norm, unfold

LOGISTIC = make_link("logistic", 1.0)


def random_factors(rng, dims, rank):
    return CpFactors(tuple(rng.standard_normal((d, rank)) for d in dims))


def simulated(rng, dims=(10, 10, 10), rank=1, sigma=0.5, scale=1.0):
    theta = gen_cp_signal(dims, rank, rng) * scale
    link = make_link("logistic", sigma)
    return theta, link, quantize_latent(theta, link, rng)


class TestLogLikelihood:
    @pytest.mark.parametrize("family", ["logistic", "probit", "laplacian"])
    def test_zero_theta(self, family):
        link = make_link(family, 1.7)
        y = BinaryTensor((np.arange(24).reshape(2, 3, 4) % 2).astype(float))
        assert log_likelihood(y, np.zeros((2, 3, 4)), link) == pytest.approx(24 * np.log(0.5), rel=1e-14)

    def test_single_cell(self):
        y = BinaryTensor(np.ones((1, 1)))
        val = log_likelihood(y, np.full((1, 1), np.log(3.0)), LOGISTIC)
        assert val == pytest.approx(np.log(0.75), rel=1e-14)

    def test_masking_halves(self):
        vals = (np.arange(16).reshape(4, 4) % 2).astype(float)
        mask = np.zeros((4, 4), bool)
        mask[:2] = True
        full = log_likelihood(BinaryTensor(vals), np.zeros((4, 4)), LOGISTIC)
        half = log_likelihood(BinaryTensor(vals, mask), np.zeros((4, 4)), LOGISTIC)
        assert half == pytest.approx(full / 2, rel=1e-14)

    def test_dims_mismatch(self):
        with pytest.raises(ValueError):
            log_likelihood(BinaryTensor(np.zeros((2, 2))), np.zeros((2, 3)), LOGISTIC)

    def test_flip_invariance_exact(self):
        rng = np.random.default_rng(0)
        for family in ("logistic", "probit", "laplacian"):
            link = make_link(family, 0.8)
            for _ in range(10):
                theta = rng.standard_normal((4, 5, 3))
                y = BinaryTensor((rng.random((4, 5, 3)) < 0.5).astype(float))
                flipped = BinaryTensor(1.0 - y.values)
                assert log_likelihood(flipped, -theta, link) == log_likelihood(y, theta, link)


class TestUpdateMode:
    def test_fixed_point_on_saturated_noiseless_instance(self):
        rng = np.random.default_rng(1)
        factors = CpFactors(tuple(rng.choice([-1.0, 1.0], size=(4, 1)) * 30.0 for _ in range(3)))
        theta = cp_reconstruct(factors)
        y = BinaryTensor((theta >= 0).astype(float))
        cfg = FitConfig(rank=1, link=LOGISTIC)
        for mode in range(3):
            updated = update_mode(y, factors, mode, cfg)
            np.testing.assert_allclose(updated.factors[mode], factors.factors[mode], rtol=1e-10)

    def test_objective_nondecreasing(self):
        rng = np.random.default_rng(2)
        theta, link, y = simulated(rng)
        cfg = FitConfig(rank=2, link=link)
        factors = decomp._init_factors(y.dims, 2, 0.1, rng)
        before = log_likelihood(y, cp_reconstruct(factors), link)
        for mode in range(3):
            factors = update_mode(y, factors, mode, cfg)
            after = log_likelihood(y, cp_reconstruct(factors), link)
            assert after >= before - 1e-9 * max(1.0, abs(before))
            before = after

    def test_masked_cells_inert(self):
        rng = np.random.default_rng(3)
        vals = (rng.random((6, 6, 6)) < 0.5).astype(float)
        mask = rng.random((6, 6, 6)) < 0.7
        mask |= ~mask.any(axis=(1, 2))[:, None, None]  # keep slabs nonempty
        y1 = BinaryTensor(vals, mask)
        flipped = vals.copy()
        flipped[~mask] = 1.0 - flipped[~mask]
        y2 = BinaryTensor(flipped, mask)
        factors = decomp._init_factors((6, 6, 6), 2, 0.1, np.random.default_rng(4))
        cfg = FitConfig(rank=2, link=LOGISTIC)
        for mode in range(3):
            a = update_mode(y1, factors, mode, cfg)
            b = update_mode(y2, factors, mode, cfg)
            assert np.array_equal(a.factors[mode], b.factors[mode])


class TestLineSearch:
    def test_ties_prefer_fresh_endpoint(self):
        # old == new makes every grid point equal: the search returns the
        # new iterate (gamma = 0), the optimum-at-endpoint case
        rng = np.random.default_rng(5)
        theta, link, y = simulated(rng, dims=(6, 6, 6))
        cfg = FitConfig(rank=1, link=link)
        f = decomp._init_factors(y.dims, 1, 0.1, rng)
        gamma, blended = line_search(y, f, f, cfg)
        assert gamma == 0.0
        np.testing.assert_array_equal(blended.factors[0], f.factors[0])

    def test_gamma_one_recovers_previous_iterate(self):
        rng = np.random.default_rng(50)
        theta, link, y = simulated(rng, dims=(6, 6, 6))
        cfg = FitConfig(rank=1, link=link)
        old = decomp._init_factors(y.dims, 1, 0.1, rng)
        new = random_factors(rng, y.dims, 1)
        ll_old = log_likelihood(y, cp_reconstruct(old), link)
        one = CpFactors(tuple(1.0 * a + 0.0 * b for a, b in zip(old.factors, new.factors)))
        assert log_likelihood(y, cp_reconstruct(one), link) == pytest.approx(ll_old, rel=1e-14)
        gamma, blended = line_search(y, old, new, cfg)
        assert log_likelihood(y, cp_reconstruct(blended), link) >= ll_old

    def test_improves_on_both_endpoints(self):
        rng = np.random.default_rng(51)
        theta, link, y = simulated(rng, dims=(6, 6, 6))
        cfg = FitConfig(rank=1, link=link)
        old = decomp._init_factors(y.dims, 1, 0.1, rng)
        new = old
        for mode in range(3):
            new = update_mode(y, new, mode, cfg)
        gamma, blended = line_search(y, old, new, cfg)
        ll_blend = log_likelihood(y, cp_reconstruct(blended), link)
        assert ll_blend >= log_likelihood(y, cp_reconstruct(new), link)
        assert ll_blend >= log_likelihood(y, cp_reconstruct(old), link)

    def test_matches_fine_grid_oracle(self):
        rng = np.random.default_rng(6)
        theta, link, y = simulated(rng, dims=(6, 6, 6))
        cfg = FitConfig(rank=1, link=link, line_search_grid=21)
        old = decomp._init_factors(y.dims, 1, 0.1, rng)
        new = random_factors(rng, y.dims, 1)
        gamma, blended = line_search(y, old, new, cfg)
        lls = []
        for g in np.linspace(0, 1, 2001):
            cand = CpFactors(tuple(g * a + (1 - g) * b for a, b in zip(old.factors, new.factors)))
            lls.append(log_likelihood(y, cp_reconstruct(cand), link))
        lls = np.array(lls)
        fine_best = np.linspace(0, 1, 2001)[np.argmax(lls)]
        assert abs(gamma - fine_best) <= 1.0 / 20 + 1e-12

    def test_alpha_filtering(self):
        rng = np.random.default_rng(7)
        y = BinaryTensor((rng.random((4, 4, 4)) < 0.5).astype(float))
        old = decomp._init_factors(y.dims, 1, 0.1, rng)
        big = CpFactors(tuple(10.0 * a for a in random_factors(rng, y.dims, 1).factors))
        alpha = max_norm(cp_reconstruct(old)) * 1.5
        cfg = FitConfig(rank=1, link=LOGISTIC, alpha=alpha)
        gamma, blended = line_search(y, old, big, cfg)
        assert max_norm(cp_reconstruct(blended)) <= alpha * (1 + 1e-9)


class TestNormalize:
    def test_reconstruction_unchanged(self):
        rng = np.random.default_rng(8)
        f = random_factors(rng, (5, 4, 3), 3)
        g = normalize(f)
        t0, t1 = cp_reconstruct(f), cp_reconstruct(g)
        assert np.linalg.norm(t0 - t1) / np.linalg.norm(t0) < 1e-12

    def test_canonical_properties(self):
        rng = np.random.default_rng(9)
        g = normalize(random_factors(rng, (5, 4, 6), 3))
        for k in range(2):
            np.testing.assert_allclose(np.linalg.norm(g.factors[k], axis=0), 1.0, atol=1e-10)
            cols = g.factors[k]
            peaks = cols[np.argmax(np.abs(cols), axis=0), np.arange(3)]
            assert np.all(peaks > 0)
        lam = np.linalg.norm(g.factors[2], axis=0)
        assert np.all(np.diff(lam) <= 1e-14)

    def test_idempotent(self):
        rng = np.random.default_rng(10)
        g = normalize(random_factors(rng, (4, 4, 4), 2))
        h = normalize(g)
        for a, b in zip(g.factors, h.factors):
            np.testing.assert_allclose(a, b, atol=1e-13)

    def test_scaling_indeterminacy(self):
        # rescaling one mode up and another down leaves the tensor alone;
        # normalization maps both representations to one canonical form
        rng = np.random.default_rng(11)
        f = random_factors(rng, (4, 4, 4), 2)
        scaled = f.replace_mode(0, 7.0 * f.factors[0]).replace_mode(2, f.factors[2] / 7.0)
        a, b = normalize(f), normalize(scaled)
        for ma, mb in zip(a.factors, b.factors):
            np.testing.assert_allclose(ma, mb, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(cp_reconstruct(a), cp_reconstruct(b), rtol=1e-9, atol=1e-12)

    def test_degenerate_column(self):
        f = CpFactors((np.zeros((3, 1)), np.ones((3, 1)), np.ones((3, 1))))
        with pytest.raises(DegenerateColumn):
            normalize(f)


class TestFit:
    def test_trace_nondecreasing_and_deterministic(self):
        rng = np.random.default_rng(12)
        theta, link, y = simulated(rng, dims=(8, 8, 8), rank=2)
        cfg = FitConfig(rank=2, link=link, n_starts=2, seed=5)
        res = fit(y, cfg)
        diffs = np.diff(res.loglik_trace)
        assert np.all(diffs >= -1e-10 * np.maximum(1.0, np.abs(res.loglik_trace[:-1])))
        res2 = fit(y, cfg)
        assert np.array_equal(res.theta_hat, res2.theta_hat)
        assert np.array_equal(res.loglik_trace, res2.loglik_trace)
        assert res.start_index == res2.start_index

    def test_result_invariants(self):
        rng = np.random.default_rng(13)
        theta, link, y = simulated(rng, dims=(8, 8, 8))
        res = fit(y, FitConfig(rank=1, link=link, n_starts=2, seed=1))
        np.testing.assert_allclose(res.theta_hat, cp_reconstruct(res.factors), atol=1e-10)
        assert res.final_loglik == res.loglik_trace[-1]
        assert res.n_iterations == len(res.loglik_trace) - 1

    def test_alpha_bound_respected(self):
        rng = np.random.default_rng(14)
        theta, link, y = simulated(rng, dims=(6, 6, 6), scale=3.0)
        res = fit(y, FitConfig(rank=1, link=link, alpha=0.5, n_starts=2, seed=2))
        assert max_norm(res.theta_hat) <= 0.5 + 1e-8

    def test_final_objective_beats_truth_usually(self):
        # the converged objective should sit at or above the truth's
        # likelihood in the clear majority of replicates
        link = make_link("logistic", 10**-0.5)
        wins = 0
        n_seeds = 30
        for seed in range(n_seeds):
            rng = np.random.default_rng([200, seed])
            theta = gen_cp_signal((20, 20, 20), 1, rng)
            y = quantize_latent(theta, link, rng)
            res = fit(y, FitConfig(rank=1, link=link, n_starts=2, seed=seed))
            if res.final_loglik >= log_likelihood(y, theta, link):
                wins += 1
        assert wins >= 0.8 * n_seeds

    def test_flip_trace_mirrors(self):
        rng = np.random.default_rng(15)
        theta, link, y = simulated(rng, dims=(7, 7, 7))
        init = decomp._init_factors(y.dims, 1, 0.1, np.random.default_rng(42))
        cfg = FitConfig(rank=1, link=link, n_starts=1, seed=3)
        res = fit(y, cfg, init=init)
        neg_init = init.replace_mode(0, -init.factors[0])
        res_flip = fit(BinaryTensor(1.0 - y.values, y.mask), cfg, init=neg_init)
        assert len(res.loglik_trace) == len(res_flip.loglik_trace)
        np.testing.assert_allclose(res.loglik_trace, res_flip.loglik_trace, rtol=1e-8, atol=1e-8)
        np.testing.assert_allclose(res_flip.theta_hat, -res.theta_hat, rtol=1e-6, atol=1e-8)

    def test_masked_cells_do_not_matter(self):
        rng = np.random.default_rng(16)
        vals = (rng.random((6, 6, 6)) < 0.4).astype(float)
        mask = rng.random((6, 6, 6)) < 0.8
        y1 = BinaryTensor(vals, mask)
        flipped = vals.copy()
        flipped[~mask] = 1.0 - flipped[~mask]
        y2 = BinaryTensor(flipped, mask)
        cfg = FitConfig(rank=1, link=LOGISTIC, n_starts=1, seed=4)
        r1, r2 = fit(y1, cfg), fit(y2, cfg)
        assert np.array_equal(r1.theta_hat, r2.theta_hat)

    def test_empty_slab_rejected(self):
        vals = np.zeros((4, 4, 4))
        mask = np.ones((4, 4, 4), bool)
        mask[2, :, :] = False
        with pytest.raises(ValueError, match="slab"):
            fit(BinaryTensor(vals, mask), FitConfig(rank=1, link=LOGISTIC))

    def test_all_starts_failed(self, monkeypatch):
        rng = np.random.default_rng(17)
        theta, link, y = simulated(rng, dims=(5, 5, 5))

        def boom(*args, **kwargs):
            raise DegenerateColumn("forced")

        monkeypatch.setattr(decomp, "update_mode", boom)
        with pytest.raises(AllStartsFailed):
            fit(y, FitConfig(rank=1, link=link, n_starts=2, seed=0))


class TestModelSelection:
    def test_effective_params(self):
        assert effective_params((20, 20, 20), 5) == 290
        assert effective_params((10, 10), 2) == 36
        assert effective_params((2, 2, 2), 1) == 4
        with pytest.raises(ValueError):
            effective_params((4, 4, 4), 0)

    def test_bic_penalty_monotone(self):
        rng = np.random.default_rng(18)
        theta, link, y = simulated(rng, dims=(6, 6, 6))
        res = fit(y, FitConfig(rank=1, link=link, n_starts=1, seed=0))
        fake_r2 = dataclasses.replace(
            res, factors=CpFactors(tuple(np.hstack([a, a]) for a in res.factors.factors))
        )
        assert bic(y, fake_r2) > bic(y, res)

    def test_bic_uses_observed_count(self):
        rng = np.random.default_rng(19)
        vals = (rng.random((6, 6, 6)) < 0.5).astype(float)
        mask = rng.random((6, 6, 6)) < 0.9
        y = BinaryTensor(vals, mask)
        res = fit(y, FitConfig(rank=1, link=LOGISTIC, n_starts=1, seed=1))
        expected = -2 * res.final_loglik + effective_params((6, 6, 6), 1) * np.log(y.n_observed)
        assert res.bic == pytest.approx(expected, rel=1e-14)

    def test_select_rank_recovers_truth(self):
        rng = np.random.default_rng(20)
        link = make_link("logistic", 0.1)
        theta = gen_cp_signal((16, 16, 16), 2, rng)
        y = quantize_latent(theta, link, rng)
        best, table = select_rank(y, FitConfig(rank=1, link=link, n_starts=2, seed=6), 1, 4)
        assert best == 2
        assert [row["rank"] for row in table] == [1, 2, 3, 4]
        bics = [row["bic"] for row in table]
        assert min(bics) == bics[1]

    def test_select_rank_records_failures(self, monkeypatch):
        rng = np.random.default_rng(21)
        theta, link, y = simulated(rng, dims=(6, 6, 6))
        real_fit = decomp.fit

        def flaky(y_, cfg, init=None):
            if cfg.rank == 2:
                raise AllStartsFailed("forced")
            return real_fit(y_, cfg, init)

        monkeypatch.setattr(decomp, "fit", flaky)
        best, table = decomp.select_rank(y, FitConfig(rank=1, link=link, n_starts=1, seed=0), 1, 3)
        assert table[1]["bic"] is None and table[1]["error"] == "forced"
        assert table[0]["bic"] is not None and table[2]["bic"] is not None


class TestPredictProba:
    def test_values_and_monotonicity(self):
        rng = np.random.default_rng(22)
        theta, link, y = simulated(rng, dims=(6, 6, 6))
        res = fit(y, FitConfig(rank=1, link=link, n_starts=1, seed=0))
        probs = predict_proba(res, link)
        assert np.all((probs > 0) & (probs < 1))
        np.testing.assert_allclose(probs, link.f(res.theta_hat), atol=1e-15)
        flat_t, flat_p = res.theta_hat.ravel(), probs.ravel()
        order = np.argsort(flat_t)
        assert np.all(np.diff(flat_p[order]) >= 0)
