"""Array-in/array-out adapter around the betaacq core.

For training loops that want to score pools without file round-trips:
plain numpy arrays in, plain numpy arrays out. The adapter carries no
numerical logic of its own — no clamping, no defaults beyond forwarding —
so results are bit-identical to the core for the same inputs and seed.
Float64 C-contiguous inputs pass through zero-copy; anything else is
converted once.
"""

from __future__ import annotations

import numpy as np

import betaacq
from betaacq import Measure
from betaacq.acquisition import BalEntOptions
from betaacq.betamodel import SampleTensor
from betaacq.loop import PoolState
from betaacq.loop import select_topk as _core_select_topk

__all__ = ["score_pool", "select_topk", "fit_beta", "__version__"]

__version__ = betaacq.__version__


class BindingError(ValueError):
    """Host array does not match the expected shape or dtype."""


def _as_sample_array(samples):
    arr = np.asarray(samples)
    if arr.ndim != 3:
        raise BindingError(
            f"expected a 3-d array of shape (points, draws, classes), "
            f"got {arr.ndim}-d shape {arr.shape}"
        )
    if not np.issubdtype(arr.dtype, np.number):
        raise BindingError(f"expected a numeric array, got dtype {arr.dtype}")
    return np.ascontiguousarray(arr, dtype=np.float64)


def _options_from_mapping(options):
    if options is None:
        return None
    if isinstance(options, BalEntOptions):
        return options
    return BalEntOptions(**dict(options))


def score_pool(samples, measure, options=None, seed=None):
    """Score every pool point; delegates to betaacq.score_pool.

    samples: array of shape (points, draws, classes) with probabilities.
    measure: a measure name such as "balentacq" or "mc_bald".
    options: optional mapping with "priority" and/or "precision_case".
    Returns a float64 array of length points.
    """
    arr = _as_sample_array(samples)
    if arr.shape[0] == 0:
        return np.empty(0, dtype=np.float64)
    try:
        scored = betaacq.score_pool(
            SampleTensor(arr), Measure(measure), _options_from_mapping(options),
            seed=seed,
        )
    except ValueError as exc:
        raise type(exc)(f"core rejected the pool: {exc}") from exc
    return scored.scores


def select_topk(scores, k, excluded=()):
    """Indices of the k highest scores, excluding `excluded`.

    Ties break toward the lowest index; the result is ordered by
    descending score then ascending index, exactly as the core selects.
    """
    values = np.asarray(scores)
    if values.ndim != 1:
        raise BindingError(f"expected a 1-d score array, got shape {values.shape}")
    values = np.ascontiguousarray(values, dtype=np.float64)
    state = PoolState.fresh(len(values), excluded)
    return _core_select_topk(values, state, k)


def fit_beta(samples):
    """Per-(point, class) moment-matched Beta parameters.

    Returns (alpha, beta) float64 arrays of shape (points, classes).
    """
    arr = _as_sample_array(samples)
    if arr.shape[0] == 0:
        empty = np.empty((0, arr.shape[2]), dtype=np.float64)
        return empty, empty.copy()
    marginals = betaacq.fit_pool(SampleTensor(arr))
    return marginals.alpha, marginals.beta
