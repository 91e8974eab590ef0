"""Fit per-class Beta marginals to MC softmax sample tensors.

Moment matching: alpha = m^2 (1-m) / var - m, beta = (1/m - 1) alpha, after
clamping the sample moments into the Beta-representable region. Fitting is
per (point, class), so the result is independent of processing order and of
any point-level parallel schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

__all__ = [
    "ClampFlag",
    "ClampPolicy",
    "DataError",
    "InsufficientDrawsError",
    "SampleTensor",
    "MomentPair",
    "BetaMarginals",
    "estimate_moments",
    "fit_beta",
    "fit_pool",
]

ROW_SUM_TOL = 1e-6


class DataError(ValueError):
    """Invalid sample data; carries the first offending index."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InsufficientDrawsError(ValueError):
    """Fewer than two MC draws; moments are undefined."""


class ClampFlag(IntEnum):
    NONE = 0
    VARIANCE_FLOOR = 1
    VARIANCE_CEILING = 2
    MEAN_FLOOR = 3
    MEAN_CEILING = 4


@dataclass(frozen=True)
class ClampPolicy:
    """Bounds keeping sample moments inside the Beta-representable region."""

    mean_eps: float = 1e-6
    var_eps: float = 1e-12
    var_rel_margin: float = 1e-6
    alpha_min: float = 1e-4
    alpha_max: float = 1e6

    def __post_init__(self):
        if not (0.0 < self.mean_eps < 0.5):
            raise ValueError("mean_eps must be in (0, 0.5)")
        if not (self.var_eps > 0.0 and 0.0 < self.var_rel_margin < 1.0):
            raise ValueError("invalid variance clamp bounds")
        if not (0.0 < self.alpha_min < self.alpha_max):
            raise ValueError("alpha bounds must satisfy 0 < alpha_min < alpha_max")


DEFAULT_CLAMP = ClampPolicy()


@dataclass(frozen=True)
class MomentPair:
    """Clamped (mean, variance) of one marginal, valid for Beta fitting."""

    mean: float
    variance: float

    def __post_init__(self):
        if not (0.0 < self.mean < 1.0):
            raise ValueError(f"mean must be in (0, 1), got {self.mean}")
        if not (0.0 < self.variance < self.mean * (1.0 - self.mean)):
            raise ValueError(
                f"variance must be in (0, mean(1-mean)), got {self.variance}"
            )


class SampleTensor:
    """Pool of MC softmax draws, shape (points, draws, classes).

    Entries are probabilities; every (point, draw) row sums to 1 within
    1e-6. Validation reports the first offending index.
    """

    def __init__(self, values, validate=True):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.ndim != 3:
            raise DataError(
                f"sample tensor must be 3-d (points, draws, classes), "
                f"got shape {values.shape}"
            )
        if values.shape[2] < 2:
            raise DataError(f"need at least 2 classes, got {values.shape[2]}")
        if validate:
            self._validate(values)
        self.values = values

    @staticmethod
    def _validate(values):
        if values.size == 0:
            return
        bad = ~np.isfinite(values)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise DataError(
                f"non-finite probability at (point, draw, class) = {idx}", idx
            )
        if values.min() < 0.0 or values.max() > 1.0:
            bad = (values < 0.0) | (values > 1.0)
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise DataError(f"probability outside [0, 1] at {idx}", idx)
        sums = values.sum(axis=2)
        off = np.abs(sums - 1.0) > ROW_SUM_TOL
        if off.any():
            idx = tuple(int(i) for i in np.argwhere(off)[0])
            raise DataError(
                f"draw does not sum to 1 within {ROW_SUM_TOL:g} at "
                f"(point, draw) = {idx}: sum = {sums[idx]!r}",
                idx,
            )

    @property
    def n_points(self):
        return self.values.shape[0]

    @property
    def n_draws(self):
        return self.values.shape[1]

    @property
    def n_classes(self):
        return self.values.shape[2]


@dataclass
class BetaMarginals:
    """Fitted (alpha, beta) grids plus the clamped moments behind them."""

    alpha: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    clamp_flags: np.ndarray
    policy: ClampPolicy = field(default=DEFAULT_CLAMP)

    @property
    def n_points(self):
        return self.alpha.shape[0]

    @property
    def n_classes(self):
        return self.alpha.shape[1]

    def moments(self, point, cls):
        return MomentPair(
            float(self.mean[point, cls]), float(self.variance[point, cls])
        )

    @property
    def clamp_rate(self):
        """Fraction of (point, class) cells where any bound fired."""
        return float(np.mean(self.clamp_flags != ClampFlag.NONE))

    def row(self, point):
        return self.alpha[point], self.beta[point]


def estimate_moments(samples, policy=DEFAULT_CLAMP):
    """Two-pass per-class sample moments, clamped per policy.

    Returns (mean, variance, clamp_flags) arrays of shape (points, classes).
    Variance is the biased 1/M second central moment. The mean is clamped
    into [mean_eps, 1-mean_eps] first, then the variance into
    [var_eps, mean(1-mean)(1-var_rel_margin)] against the clamped mean.
    Mean clamps take precedence in the recorded flag.
    """
    if not isinstance(samples, SampleTensor):
        samples = SampleTensor(samples)
    if samples.n_draws < 2:
        raise InsufficientDrawsError(
            f"need at least 2 MC draws to estimate a variance, got {samples.n_draws}"
        )
    v = samples.values
    mean = v.mean(axis=1)
    var = np.mean((v - mean[:, None, :]) ** 2, axis=1)

    flags = np.zeros(mean.shape, dtype=np.uint8)
    lo, hi = policy.mean_eps, 1.0 - policy.mean_eps
    flags[mean < lo] = ClampFlag.MEAN_FLOOR
    flags[mean > hi] = ClampFlag.MEAN_CEILING
    mean = np.clip(mean, lo, hi)

    vmax = mean * (1.0 - mean) * (1.0 - policy.var_rel_margin)
    floor_hit = (var < policy.var_eps) & (flags == ClampFlag.NONE)
    ceil_hit = (var > vmax) & (flags == ClampFlag.NONE)
    flags[floor_hit] = ClampFlag.VARIANCE_FLOOR
    flags[ceil_hit] = ClampFlag.VARIANCE_CEILING
    var = np.clip(var, policy.var_eps, vmax)

    return mean, var, flags


def _fit_beta_arrays(mean, var, policy):
    """Moment-matched (alpha, beta); caps rescale both to preserve the mean."""
    alpha = mean * mean * (1.0 - mean) / var - mean
    beta = (1.0 / mean - 1.0) * alpha

    hi = np.maximum(alpha, beta)
    lo = np.minimum(alpha, beta)
    scale = np.ones_like(alpha)
    over = hi > policy.alpha_max
    scale[over] = policy.alpha_max / hi[over]
    under = (lo < policy.alpha_min) & ~over
    scale[under] = policy.alpha_min / lo[under]
    return alpha * scale, beta * scale


def fit_beta(moments, policy=DEFAULT_CLAMP):
    """Fit one (alpha, beta) pair from a MomentPair."""
    m = np.array([moments.mean])
    v = np.array([moments.variance])
    alpha, beta = _fit_beta_arrays(m, v, policy)
    return float(alpha[0]), float(beta[0])


def fit_pool(samples, policy=DEFAULT_CLAMP):
    """Fit Beta marginals for every (point, class) of a sample tensor."""
    mean, var, flags = estimate_moments(samples, policy)
    alpha, beta = _fit_beta_arrays(mean, var, policy)
    return BetaMarginals(alpha, beta, mean, var, flags, policy)
