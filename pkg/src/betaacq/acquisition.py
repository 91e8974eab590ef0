"""Acquisition measures over Beta marginals and MC sample tensors.

All measures are standalone: each point's score depends only on that
point's marginals (or draws) and, for randomized measures, on its own
counter-based stream. Scoring therefore parallelizes over points with
bit-identical results for any worker count.

Formulas (nats throughout):

  entropy            H(Y) of the renormalized expected probabilities
  beta_marginal_bald five-digamma-sum mutual-information estimate
  aleatoric          expected conditional label entropy (H(Y) minus BALD)
  mjent              sum_i m_i h(Beta(a_i+1, b_i)) + H(Y)
  balent(k)          (mjent + (k-1) ln 2) / (H(Y) + k ln 2)
  balentacq          piecewise reciprocal of balent on its non-negative branch
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import rngstreams, specfun
from .betamodel import (
    DEFAULT_CLAMP,
    BetaMarginals,
    SampleTensor,
    fit_pool,
)

__all__ = [
    "Measure",
    "BalEntOptions",
    "AcquisitionScores",
    "DegenerateDenominatorError",
    "expected_probs",
    "entropy_acq",
    "mc_bald",
    "beta_marginal_bald",
    "aleatoric",
    "mean_sd",
    "var_ratio",
    "expected_effective_loss",
    "beta_marginal_eig",
    "mjent",
    "balent",
    "balentacq",
    "mjentacq",
    "power_bald",
    "random_acq",
    "score_pool",
]

LN2 = float(np.log(2.0))
RECIPROCAL_FLOOR = 1e-12
BALD_LOG_FLOOR = 1e-12
WORKERS_ENV = "BETAACQ_WORKERS"


class Measure(str, Enum):
    RANDOM = "random"
    ENTROPY = "entropy"
    MC_BALD = "mc_bald"
    BETA_MARGINAL_BALD = "beta_marginal_bald"
    MEAN_SD = "mean_sd"
    VAR_RATIO = "var_ratio"
    POWER_BALD = "power_bald"
    EXPECTED_EFFECTIVE_LOSS = "expected_effective_loss"
    BETA_MARGINAL_EIG = "beta_marginal_eig"
    ALEATORIC = "aleatoric"
    MJENT = "mjent"
    BALENT = "balent"
    BALENTACQ = "balentacq"
    MJENTACQ = "mjentacq"

    def __str__(self):
        return self.value


#: measures whose per-point score is a deterministic function of the data
DETERMINISTIC_MEASURES = frozenset(
    m for m in Measure if m not in (Measure.RANDOM, Measure.POWER_BALD)
)


class DegenerateDenominatorError(ArithmeticError):
    """BalEnt denominator below 1e-9 for a precision case k <= 0."""


@dataclass(frozen=True)
class BalEntOptions:
    """Prioritization and precision level for the balanced-entropy family.

    The defaults (P2, k=1) are the headline measure: reciprocal on the
    non-negative branch, denominator H(Y) + ln 2.
    """

    priority: str = "P2"
    precision_case: int = 1

    def __post_init__(self):
        if self.priority not in ("P1", "P2", "P3"):
            raise ValueError(f"priority must be P1, P2 or P3, got {self.priority!r}")
        if self.precision_case not in (-1, 0, 1, 2, 3):
            raise ValueError(
                f"precision_case must be in {{-1, 0, 1, 2, 3}}, "
                f"got {self.precision_case}"
            )


DEFAULT_OPTIONS = BalEntOptions()


@dataclass
class AcquisitionScores:
    """Per-point scores for one measure."""

    measure: Measure
    scores: np.ndarray
    options: BalEntOptions | None = None
    seed: int | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.size and not np.all(np.isfinite(self.scores)):
            raise ValueError("acquisition scores must be finite")

    def __len__(self):
        return len(self.scores)


def _marginal_arrays(marginals, point=None):
    a = marginals.alpha
    b = marginals.beta
    if point is not None:
        a = a[point : point + 1]
        b = b[point : point + 1]
    return a, b


def _xlogx(p):
    out = np.zeros_like(p)
    pos = p > 0.0
    out[pos] = p[pos] * np.log(p[pos])
    return out


logger = logging.getLogger(__name__)


def _renormalized_means(a, b):
    m = a / (a + b)
    sums = m.sum(axis=1, keepdims=True)
    drift = np.abs(sums - 1.0) > 1e-3
    if drift.any():
        worst = float(sums[drift].ravel()[np.argmax(np.abs(sums[drift] - 1.0))])
        logger.warning(
            "renormalizing expected probabilities for %d point(s); "
            "worst factor %.6g (clamped marginals)",
            int(drift.sum()),
            worst,
        )
    return m / sums


def _entropy(a, b):
    return -_xlogx(_renormalized_means(a, b)).sum(axis=1)


def _bald(a, b):
    s = a + b
    m = a / s
    psi_s = specfun.digamma(s)
    psi_a = specfun.digamma(a)
    psi_a1 = specfun.digamma(a + 1.0)
    psi_s1 = specfun.digamma(s + 1.0)
    t1 = ((a - 1.0) * psi_s).sum(axis=1)
    ent = -_xlogx(m).sum(axis=1)
    t3 = (a * (a - 1.0) / s * psi_a).sum(axis=1)
    t4 = (b * (a - 1.0) / s * psi_s1).sum(axis=1)
    t5 = (a * a / s * (psi_a1 - psi_s1)).sum(axis=1)
    return t1 + ent - t3 - t4 + t5


def _aleatoric(a, b):
    s = a + b
    psi_s = specfun.digamma(s)
    psi_a = specfun.digamma(a)
    psi_a1 = specfun.digamma(a + 1.0)
    psi_s1 = specfun.digamma(s + 1.0)
    t1 = ((a - 1.0) * psi_s).sum(axis=1)
    t3 = (a * (a - 1.0) / s * psi_a).sum(axis=1)
    t4 = (b * (a - 1.0) / s * psi_s1).sum(axis=1)
    t5 = (a * a / s * (psi_a1 - psi_s1)).sum(axis=1)
    return -t1 + t3 + t4 - t5


def _mean_sd(a, b):
    s = a + b
    sd = np.sqrt(a * b / (s * s * (s + 1.0)))
    return sd.mean(axis=1)


def _var_ratio(a, b):
    return 1.0 - _renormalized_means(a, b).max(axis=1)


def _expected_effective_loss(a, b):
    s = a + b
    m = a / s
    return (m * (np.log((a + 1.0) / (s + 1.0)) - np.log(m))).sum(axis=1)


def _beta_marginal_eig(a, b):
    m = _renormalized_means(a, b)
    s1 = a + b + 1.0
    base = a / s1
    base_sum = base.sum(axis=1)
    bump = 1.0 / s1
    # loop over the conditioning class; memory stays O(N*C)
    inner = np.empty_like(m)
    for i in range(a.shape[1]):
        q = base.copy()
        q[:, i] += bump[:, i]
        q /= (base_sum + bump[:, i])[:, None]
        inner[:, i] = -_xlogx(q).sum(axis=1)
    h = -_xlogx(m).sum(axis=1)
    return h - (m * inner).sum(axis=1)


def _posterior_uncertainty(a, b):
    m = _renormalized_means(a, b)
    return (m * specfun.beta_entropy(a + 1.0, b)).sum(axis=1)


def _mjent(a, b):
    return _posterior_uncertainty(a, b) + _entropy(a, b)


def _mjent_a3_path(a, b):
    m = _renormalized_means(a, b)
    h_plus = specfun.beta_entropy(a + 1.0, b)
    return (m * (h_plus - np.log(m))).sum(axis=1)


def _posterior_entropy_printed_variant(a, b):
    # sign pattern as printed in the expanded joint-entropy expression:
    # -(a+b-1) psi(a+b+1) where the Beta(a+1, b) entropy carries +(a+b-1)
    return (
        specfun.log_beta(a + 1.0, b)
        - a * specfun.digamma(a + 1.0)
        - (b - 1.0) * specfun.digamma(b)
        - (a + b - 1.0) * specfun.digamma(a + b + 1.0)
    )


def _mjent_printed_variant(a, b):
    m = _renormalized_means(a, b)
    return (m * (_posterior_entropy_printed_variant(a, b) - np.log(m))).sum(axis=1)


def _balent(a, b, options):
    k = options.precision_case
    h = _entropy(a, b)
    num = _posterior_uncertainty(a, b) + h + (k - 1) * LN2
    den = h + k * LN2
    if k <= 0 and np.any(den < 1e-9):
        raise DegenerateDenominatorError(
            f"balent denominator below 1e-9 for precision case k={k}"
        )
    return num / den


def _apply_priority(values, priority):
    if priority == "P1":
        return -values
    if priority == "P3":
        return values.copy()
    out = np.where(
        values >= 0.0, 1.0 / np.maximum(values, RECIPROCAL_FLOOR), values
    )
    return out


def _balentacq(a, b, options):
    return _apply_priority(_balent(a, b, options), options.priority)


def _mjentacq(a, b):
    u = _mjent(a, b)
    return np.where(u >= 0.0, 1.0 / np.maximum(u, RECIPROCAL_FLOOR), u)


def _mc_bald(values):
    mean = values.mean(axis=1)
    h_mean = -_xlogx(mean).sum(axis=1)
    h_draws = -_xlogx(values).sum(axis=2).mean(axis=1)
    return np.maximum(h_mean - h_draws, 0.0)


# -- per-point operations ----------------------------------------------------


def expected_probs(marginals, point):
    """Renormalized Beta means alpha/(alpha+beta) of one point."""
    a, b = _marginal_arrays(marginals, point)
    return _renormalized_means(a, b)[0]


def entropy_acq(marginals, point):
    a, b = _marginal_arrays(marginals, point)
    return float(_entropy(a, b)[0])


def beta_marginal_bald(marginals, point):
    a, b = _marginal_arrays(marginals, point)
    return float(_bald(a, b)[0])


def aleatoric(marginals, point):
    a, b = _marginal_arrays(marginals, point)
    return float(_aleatoric(a, b)[0])


def mean_sd(marginals, point):
    a, b = _marginal_arrays(marginals, point)
    return float(_mean_sd(a, b)[0])


def var_ratio(marginals, point):
    a, b = _marginal_arrays(marginals, point)
    return float(_var_ratio(a, b)[0])


def expected_effective_loss(marginals, point):
    a, b = _marginal_arrays(marginals, point)
    return float(_expected_effective_loss(a, b)[0])


def beta_marginal_eig(marginals, point):
    a, b = _marginal_arrays(marginals, point)
    return float(_beta_marginal_eig(a, b)[0])


def mjent(marginals, point, *, printed_sign_variant=False):
    """Marginalized joint entropy of one point.

    printed_sign_variant flips the sign of the (a+b-1) psi(a+b+1) term in
    the posterior Beta entropy, for comparison against the quadrature
    oracle; the default is the standard differential entropy.
    """
    a, b = _marginal_arrays(marginals, point)
    if printed_sign_variant:
        return float(_mjent_printed_variant(a, b)[0])
    return float(_mjent(a, b)[0])


def balent(marginals, point, options=DEFAULT_OPTIONS):
    a, b = _marginal_arrays(marginals, point)
    return float(_balent(a, b, options)[0])


def balentacq(marginals, point, options=DEFAULT_OPTIONS):
    a, b = _marginal_arrays(marginals, point)
    return float(_balentacq(a, b, options)[0])


def mjentacq(marginals, point):
    a, b = _marginal_arrays(marginals, point)
    return float(_mjentacq(a, b)[0])


def mc_bald(samples, point):
    """Entropy of the mean draw minus mean per-draw entropy, clipped at 0."""
    if not isinstance(samples, SampleTensor):
        samples = SampleTensor(samples)
    return float(_mc_bald(samples.values[point : point + 1])[0])


def power_bald(bald_value, seed, point, *, gumbel=None):
    """log BALD perturbed by standard Gumbel noise from the point's stream."""
    g = rngstreams.point_gumbel(seed, "power_bald", point) if gumbel is None else gumbel
    return float(np.log(max(bald_value, BALD_LOG_FLOOR)) + g)


def random_acq(seed, point):
    """Uniform [0, 1) value, deterministic in (seed, point)."""
    return rngstreams.point_uniform(seed, "random", point)


# -- pool scoring ------------------------------------------------------------

_CHUNK_TARGET_VALUES = 4_000_000  # draws*classes values per chunk


def _score_marginal_chunk(marginals, measure, options):
    a, b = marginals.alpha, marginals.beta
    if measure == Measure.ENTROPY:
        return _entropy(a, b)
    if measure == Measure.BETA_MARGINAL_BALD:
        return _bald(a, b)
    if measure == Measure.ALEATORIC:
        return _aleatoric(a, b)
    if measure == Measure.MEAN_SD:
        return _mean_sd(a, b)
    if measure == Measure.VAR_RATIO:
        return _var_ratio(a, b)
    if measure == Measure.EXPECTED_EFFECTIVE_LOSS:
        return _expected_effective_loss(a, b)
    if measure == Measure.BETA_MARGINAL_EIG:
        return _beta_marginal_eig(a, b)
    if measure == Measure.MJENT:
        return _mjent(a, b)
    if measure == Measure.BALENT:
        return _balent(a, b, options)
    if measure == Measure.BALENTACQ:
        return _balentacq(a, b, options)
    if measure == Measure.MJENTACQ:
        return _mjentacq(a, b)
    raise ValueError(f"measure {measure} is not marginal-based")


def _chunk_bounds(n_points, n_draws, n_classes, n_workers):
    per_chunk = max(1, _CHUNK_TARGET_VALUES // max(1, n_draws * n_classes))
    if n_workers > 1:
        per_chunk = min(per_chunk, max(1, -(-n_points // n_workers)))
    edges = list(range(0, n_points, per_chunk)) + [n_points]
    return list(zip(edges[:-1], edges[1:]))


def score_pool(
    samples,
    measure,
    options=None,
    seed=None,
    *,
    n_workers=None,
    power_bald_estimator="mc",
    clamp_policy=DEFAULT_CLAMP,
):
    """Score every pool point with one measure.

    Marginals are fitted internally when the measure needs them. Work is
    chunked over points; chunks may run on a thread pool (n_workers, or the
    BETAACQ_WORKERS env var) without changing any output bit.

    power_bald_estimator selects the BALD estimate that PowerBALD perturbs:
    "mc" (default) or "beta" for the marginal closed form.
    """
    measure = Measure(measure)
    if options is None:
        options = DEFAULT_OPTIONS
    if n_workers is None:
        n_workers = int(os.environ.get(WORKERS_ENV, "1"))
    if isinstance(samples, BetaMarginals):
        marginals_in, samples_in = samples, None
        n, m_draws, c = samples.n_points, 0, samples.n_classes
    else:
        if not isinstance(samples, SampleTensor):
            samples = SampleTensor(samples)
        marginals_in, samples_in = None, samples
        n, m_draws, c = samples.n_points, samples.n_draws, samples.n_classes

    if measure in (Measure.RANDOM, Measure.POWER_BALD) and seed is None:
        raise ValueError(f"measure {measure} requires a seed")
    if power_bald_estimator not in ("mc", "beta"):
        raise ValueError(f"unknown power_bald_estimator {power_bald_estimator!r}")

    def chunk_marginals(lo, hi):
        if marginals_in is not None:
            return BetaMarginals(
                marginals_in.alpha[lo:hi],
                marginals_in.beta[lo:hi],
                marginals_in.mean[lo:hi],
                marginals_in.variance[lo:hi],
                marginals_in.clamp_flags[lo:hi],
                marginals_in.policy,
            )
        return fit_pool(
            SampleTensor(samples_in.values[lo:hi], validate=False), clamp_policy
        )

    def run_chunk(lo, hi):
        if measure == Measure.RANDOM:
            return np.array(
                [random_acq(seed, i) for i in range(lo, hi)], dtype=np.float64
            )
        if measure == Measure.MC_BALD or (
            measure == Measure.POWER_BALD and power_bald_estimator == "mc"
        ):
            if samples_in is None:
                raise ValueError(f"measure {measure} needs draw samples")
            bald = _mc_bald(samples_in.values[lo:hi])
        elif measure == Measure.POWER_BALD:
            chunk = chunk_marginals(lo, hi)
            bald = _bald(chunk.alpha, chunk.beta)
        else:
            return _score_marginal_chunk(chunk_marginals(lo, hi), measure, options)
        if measure == Measure.MC_BALD:
            return bald
        return np.array(
            [power_bald(v, seed, i) for v, i in zip(bald, range(lo, hi))],
            dtype=np.float64,
        )

    bounds = _chunk_bounds(n, m_draws, c, n_workers)
    out = np.empty(n, dtype=np.float64)
    if n_workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            for (lo, hi), res in zip(
                bounds, pool.map(lambda be: run_chunk(*be), bounds)
            ):
                out[lo:hi] = res
    else:
        for lo, hi in bounds:
            out[lo:hi] = run_chunk(lo, hi)

    uses_options = measure in (Measure.BALENT, Measure.BALENTACQ)
    return AcquisitionScores(
        measure=measure,
        scores=out,
        options=options if uses_options else None,
        seed=seed if measure in (Measure.RANDOM, Measure.POWER_BALD) else None,
    )
