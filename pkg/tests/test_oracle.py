"""Oracle lab: analytic references, synthetic pools, studies."""

import math

import numpy as np
import pytest

from betaacq import acquisition as acq
from betaacq import specfun as sf
from betaacq.acquisition import Measure, score_pool
from betaacq.oracle import (
    SyntheticPoolSpec,
    UndefinedCorrelationError,
    dirichlet_bald,
    generate_pool,
    mc_dirichlet_bald,
    quadrature_beta_entropy,
    quadrature_mjent,
    random_simplex_marginals,
    rank_correlation_study,
    rmse_study,
    run_battery,
    sign_experiment,
    spearman,
)
from conftest import marginals_from_arrays

LN2 = math.log(2.0)


class TestDirichletBald:
    def test_flat_two_class(self):
        assert dirichlet_bald([1.0, 1.0]) == pytest.approx(LN2 - 0.5, abs=1e-12)

    def test_concentrated_vanishes(self):
        assert dirichlet_bald([500.0, 500.0, 500.0]) < 5e-3
        assert dirichlet_bald([5000.0] * 5) < 1e-3

    def test_matches_beta_marginal_form(self):
        rng = np.random.default_rng(33)
        for c in (2, 5, 10, 100):
            for _ in range(50):
                eta = np.exp(rng.uniform(math.log(0.1), math.log(10.0), c))
                s = eta.sum()
                m = marginals_from_arrays(eta, s - eta)
                assert dirichlet_bald(eta) == pytest.approx(
                    acq.beta_marginal_bald(m, 0), abs=1e-10
                )

    def test_domain_error(self):
        with pytest.raises(sf.DomainError):
            dirichlet_bald([1.0, -2.0])

    def test_matches_mc_estimate(self):
        rng = np.random.default_rng(44)
        for c in (2, 5, 10):
            eta = rng.uniform(0.5, 2.0, c)
            est, se = mc_dirichlet_bald(eta, 10_000, seed=c)
            assert abs(est - dirichlet_bald(eta)) <= 3.0 * se


class TestQuadratureOracles:
    def test_uniform_entropy_zero(self):
        assert quadrature_beta_entropy(1.0, 1.0) == pytest.approx(0.0, abs=1e-10)

    def test_beta22(self):
        assert quadrature_beta_entropy(2.0, 2.0) == pytest.approx(
            5.0 / 3.0 - math.log(6.0), abs=1e-8
        )

    def test_hard_small_shapes(self):
        assert quadrature_beta_entropy(0.2, 0.3) == pytest.approx(
            sf.beta_entropy(0.2, 0.3), abs=1e-7
        )

    def test_mjent_quadrature_matches_closed_form(self):
        for i in range(25):
            al, be = random_simplex_marginals(3, 123, i)
            closed = float(acq._mjent_a3_path(al[None, :], be[None, :])[0])
            assert quadrature_mjent(al, be) == pytest.approx(closed, abs=1e-8)


class TestGeneratePool:
    def test_simplex_rows(self):
        for kind in ("dirichlet", "softmax_gaussian"):
            spec = SyntheticPoolSpec(kind, 10, 32, 4, seed=1)
            pool = generate_pool(spec)
            np.testing.assert_allclose(pool.values.sum(axis=2), 1.0, atol=1e-9)

    def test_seed_determinism(self):
        spec = SyntheticPoolSpec("softmax_gaussian", 8, 16, 3, seed=5)
        assert np.array_equal(generate_pool(spec).values, generate_pool(spec).values)
        other = SyntheticPoolSpec("softmax_gaussian", 8, 16, 3, seed=6)
        assert not np.array_equal(
            generate_pool(spec).values, generate_pool(other).values
        )

    def test_repeat_changes_pool(self):
        spec = SyntheticPoolSpec("dirichlet", 8, 16, 3, seed=5)
        assert not np.array_equal(
            generate_pool(spec, repeat=0).values, generate_pool(spec, repeat=1).values
        )

    def test_fixed_flat_concentration_means(self):
        spec = SyntheticPoolSpec(
            "dirichlet", 10, 10_000, 2, concentration_log_range=(0.0, 0.0), seed=3
        )
        pool = generate_pool(spec)
        assert pool.values.mean(axis=(0, 1))[0] == pytest.approx(0.5, abs=0.01)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SyntheticPoolSpec("gaussian", 10, 10, 3)
        with pytest.raises(ValueError):
            SyntheticPoolSpec("dirichlet", 10, 10, 1)
        with pytest.raises(ValueError):
            SyntheticPoolSpec("dirichlet", 10, 10, 3, concentration_log_range=(1.0, 0.0))


class TestSpearman:
    def test_identity(self):
        assert spearman([3.0, 1.0, 2.0], [3.0, 1.0, 2.0]) == 1.0

    def test_reversal(self):
        assert spearman([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == -1.0

    def test_closed_form_example(self):
        # 1 - 6 sum(d^2) / (n (n^2-1)) with d = (0, 1, 1), n = 3
        assert spearman([1.0, 2.0, 3.0], [1.0, 3.0, 2.0]) == pytest.approx(0.5)

    def test_ties_average_ranks(self):
        # scipy reference value frozen: spearmanr([1,2,2,3],[1,2,3,4])
        assert spearman([1.0, 2.0, 2.0, 3.0], [1.0, 2.0, 3.0, 4.0]) == pytest.approx(
            0.9486832980505139, abs=1e-12
        )

    def test_zero_variance_error(self):
        with pytest.raises(UndefinedCorrelationError):
            spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_length_checks(self):
        with pytest.raises(ValueError):
            spearman([1.0, 2.0], [1.0, 2.0])

    def test_matches_scipy_random(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        rng = np.random.default_rng(19)
        for _ in range(20):
            x = rng.normal(size=60)
            y = rng.normal(size=60) + 0.5 * x
            x[rng.integers(0, 60, 5)] = x[0]  # inject ties
            ref = scipy_stats.spearmanr(x, y).statistic
            assert spearman(x, y) == pytest.approx(ref, abs=1e-12)


class TestStudies:
    def test_rank_correlation_smoke(self):
        spec = SyntheticPoolSpec("softmax_gaussian", 60, 128, 5, seed=8)
        report = rank_correlation_study(
            spec,
            [Measure.BETA_MARGINAL_BALD, Measure.EXPECTED_EFFECTIVE_LOSS],
            repeats=2,
        )
        assert report.repeats == 2
        (pair,) = report.pairs
        assert -1.0 <= pair.rho_mean <= 1.0
        assert pair.rho_mean > 0.9
        assert pair.rho_sd is not None

    def test_identical_measure_rho_one(self):
        spec = SyntheticPoolSpec("softmax_gaussian", 60, 64, 4, seed=9)
        pool = generate_pool(spec)
        s = score_pool(pool, Measure.ENTROPY).scores
        assert spearman(s, s) == 1.0

    def test_pool_size_guard(self):
        spec = SyntheticPoolSpec("softmax_gaussian", 10, 16, 3, seed=1)
        with pytest.raises(ValueError):
            rank_correlation_study(spec, [Measure.ENTROPY, Measure.MC_BALD], 1)

    def test_rmse_self_zero(self):
        spec = SyntheticPoolSpec("dirichlet", 60, 256, 5, seed=14)
        pool = generate_pool(spec)
        mc = score_pool(pool, Measure.MC_BALD).scores
        assert float(np.sqrt(np.mean((mc - mc) ** 2))) == 0.0

    def test_rmse_study_smoke(self):
        spec = SyntheticPoolSpec("dirichlet", 60, 2000, 5, seed=15)
        rmse, rho = rmse_study(spec, repeats=2)
        assert rmse < 0.05
        assert rho > 0.9


class TestSignExperiment:
    def test_standard_sign_wins(self):
        res = sign_experiment(n_sets=30, seed=777)
        assert res.max_error_standard <= 1e-6
        assert res.max_error_printed_variant > 1e-2

    def test_battery_passes(self):
        results = run_battery(full=False, seed=4321)
        for r in results:
            assert r.passed, f"{r.name}: {r.measured} vs {r.tolerance}"
