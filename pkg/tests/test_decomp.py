import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tensoraug.decomp import (CPFactors, TTFactors, TuckerFactors, cp_als, cp_reconstruct, cp_to_tucker, hooi,
                              hosvd, reconstruct, tt_element, tt_reconstruct, tt_svd, tucker_reconstruct)
from tensoraug.decomp._svd import fix_signs, left_singular_vectors
from tensoraug.decomp.tucker import batched_loadings, batched_mode_product
from tensoraug.errors import InvalidArgument, InvalidRank, ShapeError
from tensoraug.tensor import frobenius_norm, mode_n_product, outer_product, unfold


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def cp_tensor(rng, shape, rank):
    loadings = [rng.standard_normal((d, rank)) for d in shape]
    return cp_reconstruct(CPFactors(np.ones(rank), loadings))


class TestSvdHelpers:
    @pytest.mark.parametrize("shape", [(5, 40), (40, 5), (70, 80)])
    def test_left_vectors_match_lapack(self, rng, shape):
        a = rng.standard_normal(shape)
        u, s = left_singular_vectors(a, 3)
        ref_u, ref_s, _ = np.linalg.svd(a, full_matrices=False)
        np.testing.assert_allclose(s[:3], ref_s[:3], rtol=1e-10)
        np.testing.assert_allclose(np.abs(u.T @ ref_u[:, :3]), np.eye(3), atol=1e-8)
        np.testing.assert_allclose(u.T @ u, np.eye(3), atol=1e-10)

    def test_sign_convention(self, rng):
        u = fix_signs(rng.standard_normal((6, 4)))
        idx = np.argmax(np.abs(u), axis=0)
        assert np.all(u[idx, np.arange(4)] > 0)


class TestHosvd:
    def test_rank_one_exact(self, rng):
        t = outer_product([rng.standard_normal(d) for d in (3, 4, 5)])
        assert rel_err(tucker_reconstruct(hosvd(t, (1, 1, 1))), t) <= 1e-10

    @pytest.mark.parametrize("shape", [(3, 4, 5), (6, 6, 6), (2, 3, 2, 4)])
    def test_full_ranks_round_trip(self, rng, shape):
        t = rng.standard_normal(shape)
        assert rel_err(tucker_reconstruct(hosvd(t, shape)), t) <= 1e-10

    def test_orthonormal_loadings(self, rng):
        f = hosvd(rng.standard_normal((6, 7, 8)), (2, 3, 4))
        for u in f.loadings:
            assert np.linalg.norm(u.T @ u - np.eye(u.shape[1])) <= 1e-10

    def test_error_bounded_by_svd_tails(self, rng):
        t = rng.standard_normal((6, 6, 6))
        ranks = (2, 2, 2)
        err2 = np.sum((t - tucker_reconstruct(hosvd(t, ranks))) ** 2)
        bound = sum(np.sum(np.linalg.svd(unfold(t, m), compute_uv=False)[r:] ** 2) for m, r in enumerate(ranks))
        assert err2 <= bound * (1 + 1e-12)

    @pytest.mark.parametrize("ranks", [(0, 2, 2), (7, 2, 2), (2, 2)])
    def test_invalid_ranks(self, rng, ranks):
        with pytest.raises(InvalidRank):
            hosvd(rng.standard_normal((6, 6, 6)), ranks)

    def test_reconstruct_identity_loadings(self, rng):
        t = rng.standard_normal((2, 3, 4))
        f = TuckerFactors(t, [np.eye(d) for d in t.shape])
        np.testing.assert_array_equal(tucker_reconstruct(f), t)

    def test_rank_one_factors_match_outer_product(self, rng):
        vecs = [rng.standard_normal((d, 1)) for d in (3, 4, 2)]
        f = TuckerFactors(np.array([[[2.5]]]), vecs)
        np.testing.assert_allclose(tucker_reconstruct(f), 2.5 * outer_product([v[:, 0] for v in vecs]),
                                   atol=1e-14)

    def test_factor_shape_check(self):
        with pytest.raises(ShapeError):
            TuckerFactors(np.zeros((2, 2, 2)), [np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((3, 3))])


class TestHooi:
    def test_exact_low_rank_one_sweep(self, rng):
        core = rng.standard_normal((2, 2, 2))
        us = [np.linalg.qr(rng.standard_normal((d, 2)))[0] for d in (5, 6, 7)]
        t = tucker_reconstruct(TuckerFactors(core, us))
        f, fits = hooi(t, (2, 2, 2), max_iter=1, return_history=True)
        assert len(fits) == 2
        assert rel_err(tucker_reconstruct(f), t) <= 1e-10

    def test_not_worse_than_hosvd(self, rng):
        t = rng.standard_normal((8, 8, 8))
        e_hosvd = rel_err(tucker_reconstruct(hosvd(t, (3, 3, 3))), t)
        e_hooi = rel_err(tucker_reconstruct(hooi(t, (3, 3, 3))), t)
        assert e_hooi <= e_hosvd + 1e-15

    def test_single_sweep_bit_stable(self, rng):
        t = rng.standard_normal((5, 6, 7))
        a, b = hooi(t, (2, 3, 2), max_iter=1), hooi(t, (2, 3, 2), max_iter=1)
        np.testing.assert_array_equal(a.core, b.core)
        for ua, ub in zip(a.loadings, b.loadings):
            np.testing.assert_array_equal(ua, ub)

    def test_fit_monotone(self, rng):
        _, fits = hooi(rng.standard_normal((7, 6, 5)), (3, 2, 2), tol=1e-14, return_history=True)
        assert np.all(np.diff(fits) >= -1e-12)

    def test_history_non_decreasing_best(self, rng):
        t = rng.standard_normal((6, 7, 8))
        f, fits = hooi(t, (2, 2, 2), return_history=True)
        assert fits[0] <= max(fits)
        assert 1 - rel_err(tucker_reconstruct(f), t) == pytest.approx(max(fits), abs=1e-12)


class TestCp:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_generate_then_recover(self, seed):
        t = cp_tensor(np.random.default_rng(100 + seed), (8, 8, 8), 3)
        f = cp_als(t, 3, max_iter=200, tol=1e-14, seed=seed)
        assert rel_err(cp_reconstruct(f), t) <= 1e-6

    def test_rank_one_weight_is_norm_product(self, rng):
        vecs = [rng.standard_normal(d) for d in (3, 4, 5)]
        t = outer_product(vecs)
        f = cp_als(t, 1)
        assert rel_err(cp_reconstruct(f), t) <= 1e-10
        assert f.weights[0] == pytest.approx(np.prod([np.linalg.norm(v) for v in vecs]), rel=1e-10)

    def test_zero_tensor(self):
        f, history = cp_als(np.zeros((3, 4, 5)), 2, return_history=True)
        np.testing.assert_array_equal(f.weights, 0.0)
        np.testing.assert_allclose(np.linalg.norm(f.loadings[0], axis=0), 1.0)
        assert history[-1] == 0.0

    def test_unit_columns_and_seed_determinism(self, rng):
        t = rng.standard_normal((4, 5, 6))
        a, b = cp_als(t, 3, max_iter=20, seed=7), cp_als(t, 3, max_iter=20, seed=7)
        np.testing.assert_array_equal(a.weights, b.weights)
        for u in a.loadings:
            np.testing.assert_allclose(np.linalg.norm(u, axis=0), 1.0, rtol=1e-12)

    def test_collinear_factors_do_not_crash(self, rng):
        a = rng.standard_normal(5)
        t = outer_product([a, a, a]) * 2
        f = cp_als(t, 3, max_iter=50)
        assert np.all(np.isfinite(f.weights))
        assert rel_err(cp_reconstruct(f), t) < 1e-6

    @pytest.mark.parametrize("init", ["svd", "random"])
    def test_residual_monotone(self, rng, init):
        t = rng.standard_normal((5, 6, 4))
        _, history = cp_als(t, 4, max_iter=60, tol=1e-12, init=init, return_history=True)
        assert np.all(np.diff(history) <= 1e-12)

    def test_rank_above_mode_extent(self, rng):
        t = cp_tensor(rng, (3, 8, 8), 4)
        f = cp_als(t, 4, max_iter=500, tol=1e-14, seed=1)
        assert f.loadings[0].shape == (3, 4)
        assert rel_err(cp_reconstruct(f), t) < 1e-4

    def test_unknown_init(self):
        with pytest.raises(ValueError):
            cp_als(np.ones((2, 2, 2)), 1, init="nvecs")

    def test_cp_to_tucker(self, rng):
        f = cp_als(cp_tensor(rng, (4, 5, 3), 2), 2, max_iter=50)
        np.testing.assert_allclose(tucker_reconstruct(cp_to_tucker(f)), cp_reconstruct(f), atol=1e-12)

    def test_invalid_rank(self):
        with pytest.raises(InvalidRank):
            cp_als(np.ones((2, 2, 2)), 0)


class TestTensorTrain:
    def test_lossless(self, rng):
        t = rng.standard_normal((3, 4, 5, 2))
        assert rel_err(tt_reconstruct(tt_svd(t, eps=1e-12)), t) <= 1e-10

    def test_rank_one_separable(self, rng):
        t = outer_product([rng.standard_normal(d) for d in (3, 4, 5)])
        assert tt_svd(t).ranks == (1, 1, 1, 1)

    def test_element_matches_reconstruction(self, rng):
        t = rng.standard_normal((4, 4, 4, 4))
        f = tt_svd(t, max_ranks=3)
        full = tt_reconstruct(f)
        for idx in rng.integers(0, 4, size=(50, 4)):
            idx = tuple(idx)
            assert abs(tt_element(f, idx) - full[idx]) <= 1e-12 * max(abs(full[idx]), 1e-300) + 1e-15

    def test_eps_error_bound(self, rng):
        t = rng.standard_normal((4, 5, 4, 3))
        for eps in (0.5, 0.2, 0.05):
            f = tt_svd(t, eps=eps)
            assert rel_err(tt_reconstruct(f), t) <= eps

    def test_terminal_core(self, rng):
        f = tt_svd(rng.standard_normal((2, 3)))
        np.testing.assert_array_equal(f.terminal, np.ones((1, 1, 1)))

    def test_errors(self, rng):
        t = rng.standard_normal((3, 3, 3))
        with pytest.raises(InvalidRank):
            tt_svd(t, max_ranks=(2,))
        with pytest.raises(InvalidRank):
            tt_svd(t, max_ranks=0)
        with pytest.raises(InvalidArgument):
            tt_svd(t, eps=-1.0)
        with pytest.raises(InvalidArgument):
            tt_element(tt_svd(t), (0, 0))
        with pytest.raises(ShapeError):
            TTFactors([np.zeros((2, 3, 1))])


class TestDispatchAndBatched:
    def test_reconstruct_dispatch(self, rng):
        t = rng.standard_normal((3, 4, 2))
        for f in (hosvd(t, t.shape), tt_svd(t)):
            np.testing.assert_allclose(reconstruct(f), t, atol=1e-12)

    def test_batched_loadings_match_per_sample(self, rng):
        x = rng.standard_normal((3, 6, 4, 5))
        batch = batched_loadings(x, (3, 2, 2))
        for b in range(3):
            single = hosvd(x[b], (3, 2, 2))
            for m in range(3):
                np.testing.assert_allclose(np.abs(batch[m][b].T @ single.loadings[m]), np.eye(single.ranks[m]),
                                           atol=1e-8)

    def test_batched_mode_product(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        u = rng.standard_normal((2, 6, 4))
        out = batched_mode_product(x, u, 1)
        for b in range(2):
            np.testing.assert_allclose(out[b], mode_n_product(x[b], u[b], 1), atol=1e-13)

    @settings(max_examples=25, deadline=None)
    @given(st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)), st.integers(0, 10_000))
    def test_truncation_never_increases_norm(self, shape, seed):
        t = np.random.default_rng(seed).standard_normal(shape)
        ranks = tuple(max(1, d // 2) for d in shape)
        approx = tucker_reconstruct(hosvd(t, ranks))
        assert frobenius_norm(approx) <= frobenius_norm(t) * (1 + 1e-12)
