"""Binding equivalence: bit-identical to the core, strict on shapes."""

import subprocess
import sys

import numpy as np
import pytest

import betaacq
import betaacq_bindings as bd
from betaacq import Measure
from betaacq.acquisition import BalEntOptions
from betaacq.betamodel import SampleTensor
from betaacq.loop import PoolState
from betaacq.tensorio import read_scores_csv, write_tensor


def random_pool(rng, n=20, m=64, c=4):
    return rng.dirichlet(np.full(c, 0.9), size=(n, m))


class TestScorePoolEquivalence:
    def test_bit_identical_over_random_pools(self):
        rng = np.random.default_rng(1)
        measures = [m.value for m in Measure]
        for trial in range(100):
            c = int(rng.integers(2, 6))
            pool = random_pool(rng, n=int(rng.integers(3, 24)), m=16, c=c)
            measure = measures[trial % len(measures)]
            got = bd.score_pool(pool, measure, seed=trial)
            want = betaacq.score_pool(
                SampleTensor(pool), Measure(measure), seed=trial
            ).scores
            assert got.tobytes() == want.tobytes(), measure

    def test_options_mapping_forwarded(self):
        rng = np.random.default_rng(2)
        pool = random_pool(rng)
        got = bd.score_pool(
            pool, "balentacq", options={"priority": "P1", "precision_case": 2}
        )
        want = betaacq.score_pool(
            SampleTensor(pool), Measure.BALENTACQ,
            BalEntOptions(priority="P1", precision_case=2),
        ).scores
        assert got.tobytes() == want.tobytes()

    def test_float32_input_accepted(self):
        rng = np.random.default_rng(3)
        pool = random_pool(rng).astype(np.float32)
        # float32 rows still sum to 1 within the core's 1e-6 tolerance
        got = bd.score_pool(pool, "entropy")
        want = betaacq.score_pool(
            SampleTensor(pool.astype(np.float64)), Measure.ENTROPY
        ).scores
        assert got.tobytes() == want.tobytes()

    def test_zero_copy_for_conforming_arrays(self):
        rng = np.random.default_rng(4)
        pool = np.ascontiguousarray(random_pool(rng))
        assert bd._as_sample_array(pool) is pool

    def test_empty_pool(self):
        out = bd.score_pool(np.empty((0, 8, 3)), "entropy")
        assert out.shape == (0,)

    def test_wrong_rank_rejected(self):
        with pytest.raises(bd.BindingError) as exc:
            bd.score_pool(np.zeros((3, 4)), "entropy")
        assert "(points, draws, classes)" in str(exc.value)

    def test_non_numeric_rejected(self):
        with pytest.raises(bd.BindingError):
            bd.score_pool(np.full((1, 2, 2), "x"), "entropy")

    def test_core_errors_surface_with_context(self):
        bad = np.full((2, 4, 3), 0.5)  # rows sum to 1.5
        with pytest.raises(ValueError) as exc:
            bd.score_pool(bad, "entropy")
        assert "core rejected the pool" in str(exc.value)

    def test_matches_cli_output(self, tmp_path):
        rng = np.random.default_rng(5)
        pool = rng.dirichlet([1.0, 1.0], size=(10, 512))
        tensor_path = str(tmp_path / "pool.beaq")
        write_tensor(tensor_path, SampleTensor(pool))
        out = str(tmp_path / "scores.csv")
        r = subprocess.run(
            [sys.executable, "-m", "betaacq.cli", "score", tensor_path,
             "--measure", "balentacq", "--output", out],
            capture_output=True, text=True,
        )
        assert r.returncode == 0, r.stderr
        cli_scores = read_scores_csv(out)
        assert bd.score_pool(pool, "balentacq").tobytes() == cli_scores.tobytes()


class TestSelectTopK:
    def test_matches_core(self):
        rng = np.random.default_rng(6)
        scores = rng.normal(size=30)
        state = PoolState.fresh(30, [4, 7])
        from betaacq.loop import select_topk as core

        assert bd.select_topk(scores, 5, excluded=[4, 7]) == core(scores, state, 5)

    def test_tie_break(self):
        assert bd.select_topk(np.array([1.0, 1.0, 0.5]), 2) == [0, 1]

    def test_wrong_rank(self):
        with pytest.raises(bd.BindingError):
            bd.select_topk(np.zeros((3, 3)), 1)


class TestFitBeta:
    def test_matches_core(self):
        rng = np.random.default_rng(7)
        pool = random_pool(rng)
        alpha, beta = bd.fit_beta(pool)
        marg = betaacq.fit_pool(SampleTensor(pool))
        assert alpha.tobytes() == marg.alpha.tobytes()
        assert beta.tobytes() == marg.beta.tobytes()

    def test_empty(self):
        alpha, beta = bd.fit_beta(np.empty((0, 4, 3)))
        assert alpha.shape == (0, 3)
        assert beta.shape == (0, 3)
