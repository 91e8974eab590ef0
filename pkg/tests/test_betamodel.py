"""Moment estimation, clamping policy and Beta fitting."""

import numpy as np
import pytest

from betaacq.betamodel import (
    DEFAULT_CLAMP,
    ClampFlag,
    ClampPolicy,
    DataError,
    InsufficientDrawsError,
    MomentPair,
    SampleTensor,
    estimate_moments,
    fit_beta,
    fit_pool,
)


def tensor_from_binary(p_draws):
    """C=2 tensor for one point from first-class draw probabilities."""
    p = np.asarray(p_draws, dtype=np.float64)
    return SampleTensor(np.stack([p, 1.0 - p], axis=-1)[None, :, :])


class TestSampleTensor:
    def test_rejects_nan_with_index(self):
        v = np.full((2, 3, 2), 0.5)
        v[1, 2, 0] = np.nan
        with pytest.raises(DataError) as exc:
            SampleTensor(v)
        assert exc.value.index == (1, 2, 0)

    def test_rejects_bad_row_sum(self):
        v = np.full((1, 2, 2), 0.5)
        v[0, 1] = [0.7, 0.2]
        with pytest.raises(DataError) as exc:
            SampleTensor(v)
        assert exc.value.index == (0, 1)

    def test_rejects_out_of_range(self):
        v = np.zeros((1, 1, 2))
        v[0, 0] = [1.5, -0.5]
        with pytest.raises(DataError):
            SampleTensor(v)

    def test_requires_two_classes(self):
        with pytest.raises(DataError):
            SampleTensor(np.ones((1, 1, 1)))


class TestEstimateMoments:
    def test_two_point_example(self):
        mean, var, flags = estimate_moments(tensor_from_binary([0.4, 0.6]))
        assert mean[0, 0] == pytest.approx(0.5, abs=1e-15)
        assert var[0, 0] == pytest.approx(0.01, abs=1e-15)
        assert flags[0, 0] == ClampFlag.NONE

    def test_constant_draws_hit_variance_floor(self):
        mean, var, flags = estimate_moments(tensor_from_binary([0.7, 0.7, 0.7]))
        assert mean[0, 0] == pytest.approx(0.7)
        assert var[0, 0] == DEFAULT_CLAMP.var_eps
        assert flags[0, 0] == ClampFlag.VARIANCE_FLOOR

    def test_extreme_draws_hit_variance_ceiling(self):
        mean, var, flags = estimate_moments(tensor_from_binary([0.0, 1.0]))
        assert mean[0, 0] == pytest.approx(0.5)
        assert var[0, 0] == pytest.approx(
            0.25 * (1.0 - DEFAULT_CLAMP.var_rel_margin), rel=1e-12
        )
        assert flags[0, 0] == ClampFlag.VARIANCE_CEILING

    def test_one_hot_pool_clamps_all(self):
        v = np.zeros((1, 5, 3))
        v[:, :, 1] = 1.0
        mean, var, flags = estimate_moments(SampleTensor(v))
        assert (flags[0] != ClampFlag.NONE).all()
        assert flags[0, 1] == ClampFlag.MEAN_CEILING
        assert flags[0, 0] == ClampFlag.MEAN_FLOOR

    def test_single_draw_rejected(self):
        with pytest.raises(InsufficientDrawsError):
            estimate_moments(tensor_from_binary([0.4]))

    def test_biased_variance(self):
        # 1/M normalization, not Bessel
        mean, var, _ = estimate_moments(tensor_from_binary([0.2, 0.4, 0.6]))
        draws = np.array([0.2, 0.4, 0.6])
        assert var[0, 0] == pytest.approx(draws.var(), abs=1e-15)


class TestFitBeta:
    def test_symmetric_example(self):
        alpha, beta = fit_beta(MomentPair(0.5, 0.05))
        assert alpha == pytest.approx(2.0, abs=1e-12)
        assert beta == pytest.approx(2.0, abs=1e-12)

    def test_asymmetric_example(self):
        alpha, beta = fit_beta(MomentPair(0.9, 0.009))
        assert alpha == pytest.approx(8.1, abs=1e-12)
        assert beta == pytest.approx(0.9, abs=1e-12)
        # verify the fitted variance round-trips
        var = alpha * beta / ((alpha + beta) ** 2 * (alpha + beta + 1.0))
        assert var == pytest.approx(0.009, rel=1e-12)

    def test_variance_limit_clamps_to_alpha_min(self):
        m = 0.5
        v = m * (1.0 - m) * (1.0 - DEFAULT_CLAMP.var_rel_margin)
        alpha, beta = fit_beta(MomentPair(m, v))
        assert alpha == pytest.approx(DEFAULT_CLAMP.alpha_min)
        assert beta == pytest.approx(DEFAULT_CLAMP.alpha_min)

    def test_cap_preserves_mean(self):
        # tiny variance drives alpha past the cap; rescaling keeps the mean
        alpha, beta = fit_beta(MomentPair(0.3, 1e-12))
        assert max(alpha, beta) == pytest.approx(DEFAULT_CLAMP.alpha_max)
        assert alpha / (alpha + beta) == pytest.approx(0.3, abs=1e-12)

    def test_mean_preservation_random(self):
        rng = np.random.default_rng(8)
        for _ in range(500):
            m = rng.uniform(0.01, 0.99)
            v = rng.uniform(0.01, 0.99) * m * (1.0 - m)
            alpha, beta = fit_beta(MomentPair(m, v))
            assert alpha / (alpha + beta) == pytest.approx(m, abs=1e-12)

    def test_variance_reconstruction_random(self):
        rng = np.random.default_rng(9)
        for _ in range(500):
            m = rng.uniform(0.05, 0.95)
            v = rng.uniform(0.05, 0.9) * m * (1.0 - m)
            alpha, beta = fit_beta(MomentPair(m, v))
            recon = alpha * beta / ((alpha + beta) ** 2 * (alpha + beta + 1.0))
            assert recon == pytest.approx(v, rel=1e-10)

    def test_moment_pair_invariants(self):
        with pytest.raises(ValueError):
            MomentPair(0.0, 0.01)
        with pytest.raises(ValueError):
            MomentPair(0.5, 0.25)  # variance not < m(1-m)


class TestFitPool:
    def test_recovers_dirichlet_parameters(self):
        # draws exactly from Beta(3,5)/Beta(5,3) via Dirichlet(3,5)
        rng = np.random.default_rng(123)
        draws = rng.dirichlet([3.0, 5.0], size=100_000)[None, :, :]
        marg = fit_pool(SampleTensor(draws))
        assert marg.alpha[0, 0] == pytest.approx(3.0, rel=0.05)
        assert marg.beta[0, 0] == pytest.approx(5.0, rel=0.05)
        assert marg.alpha[0, 1] == pytest.approx(5.0, rel=0.05)
        assert marg.beta[0, 1] == pytest.approx(3.0, rel=0.05)

    def test_draw_permutation_invariance(self):
        rng = np.random.default_rng(21)
        v = rng.dirichlet([1.0, 2.0, 0.5], size=(4, 64))
        m1 = fit_pool(SampleTensor(v))
        perm = rng.permutation(64)
        m2 = fit_pool(SampleTensor(v[:, perm, :]))
        np.testing.assert_allclose(m1.alpha, m2.alpha, rtol=0, atol=1e-12)
        np.testing.assert_allclose(m1.beta, m2.beta, rtol=0, atol=1e-12)

    def test_duplicate_rows_identical(self):
        rng = np.random.default_rng(22)
        row = rng.dirichlet([2.0, 1.0], size=32)
        v = np.stack([row, row, row])
        marg = fit_pool(SampleTensor(v))
        assert np.array_equal(marg.alpha[0], marg.alpha[1])
        assert np.array_equal(marg.alpha[0], marg.alpha[2])
        assert np.array_equal(marg.beta[0], marg.beta[2])

    def test_one_hot_pool_flags(self):
        v = np.zeros((2, 8, 3))
        v[:, :, 0] = 1.0
        marg = fit_pool(SampleTensor(v))
        assert marg.clamp_rate == 1.0

    def test_moments_accessor(self):
        marg = fit_pool(tensor_from_binary([0.4, 0.6]))
        mp = marg.moments(0, 0)
        assert mp.mean == pytest.approx(0.5)
        assert mp.variance == pytest.approx(0.01)

    def test_custom_policy(self):
        pol = ClampPolicy(alpha_max=10.0)
        marg = fit_pool(tensor_from_binary([0.499, 0.5, 0.501]), pol)
        assert marg.alpha.max() <= 10.0 + 1e-9
