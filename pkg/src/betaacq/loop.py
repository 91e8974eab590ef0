"""Pool bookkeeping and top-K selection for the active-learning loop.

Model-agnostic: the caller retrains and supplies fresh sample tensors for
the current unlabeled pool each iteration; this module only scores, selects
and records. Ties break toward the lowest pool index so replays are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .acquisition import BalEntOptions, Measure, score_pool
from .betamodel import DEFAULT_CLAMP
from .rngstreams import derive_seed

__all__ = [
    "BudgetError",
    "HistoryEntry",
    "PoolState",
    "LoopConfig",
    "select_topk",
    "loop_step",
]


class BudgetError(ValueError):
    """Requested more selections than the unlabeled pool can provide."""


@dataclass(frozen=True)
class HistoryEntry:
    iteration: int
    selected: tuple[int, ...]
    scores: tuple[float, ...]
    measure: str
    seed: int | None


@dataclass(frozen=True)
class PoolState:
    """Labeled/unlabeled split of a pool plus the acquisition history."""

    n_total: int
    labeled: tuple[int, ...]
    unlabeled: tuple[int, ...]
    history: tuple[HistoryEntry, ...] = ()

    def __post_init__(self):
        lab, unl = set(self.labeled), set(self.unlabeled)
        if lab & unl:
            raise ValueError("labeled and unlabeled sets overlap")
        if lab | unl != set(range(self.n_total)):
            raise ValueError("labeled and unlabeled must partition the pool")

    @classmethod
    def fresh(cls, n_total, initial_labeled=()):
        labeled = tuple(sorted(int(i) for i in initial_labeled))
        unlabeled = tuple(i for i in range(n_total) if i not in set(labeled))
        return cls(n_total, labeled, unlabeled)

    @property
    def n_labeled(self):
        return len(self.labeled)


@dataclass(frozen=True)
class LoopConfig:
    k_per_iter: int
    k_total: int
    measure: Measure
    options: BalEntOptions = BalEntOptions()
    seed: int = 0

    def __post_init__(self):
        if self.k_per_iter < 1:
            raise ValueError("k_per_iter must be positive")
        if self.k_total < self.k_per_iter:
            raise ValueError("k_total must be >= k_per_iter")


def select_topk(scores, state, k):
    """The k highest-scoring unlabeled pool indices.

    scores are indexed by pool position (length n_total); labeled points
    are excluded. Output is sorted by descending score, then ascending
    index for ties.
    """
    values = np.asarray(
        scores.scores if hasattr(scores, "scores") else scores, dtype=np.float64
    )
    if values.shape != (state.n_total,):
        raise ValueError(
            f"scores must cover the whole pool ({state.n_total}), got {values.shape}"
        )
    if k > len(state.unlabeled):
        raise BudgetError(
            f"requested k={k} but only {len(state.unlabeled)} unlabeled points remain"
        )
    cand = np.asarray(state.unlabeled, dtype=np.int64)
    order = np.lexsort((cand, -values[cand]))
    return [int(i) for i in cand[order[:k]]]


def loop_step(state, samples, config, *, clamp_policy=DEFAULT_CLAMP):
    """One acquisition iteration.

    samples rows are aligned with state.unlabeled. Scores the unlabeled
    pool, moves the top min(K, remaining budget) into the labeled set and
    appends a history entry. Returns (new_state, terminal); a no-op with
    terminal=True once k_total is reached.
    """
    if state.n_labeled >= config.k_total or not state.unlabeled:
        return state, True
    if samples.n_points != len(state.unlabeled):
        raise ValueError(
            f"samples cover {samples.n_points} points but the unlabeled pool "
            f"has {len(state.unlabeled)}"
        )
    iteration = len(state.history)
    seed_iter = derive_seed(config.seed, 9, iteration)
    scored = score_pool(
        samples, config.measure, config.options, seed=seed_iter,
        clamp_policy=clamp_policy,
    )

    pool_scores = np.full(state.n_total, -np.inf)
    unl = np.asarray(state.unlabeled, dtype=np.int64)
    pool_scores[unl] = scored.scores

    k_eff = min(
        config.k_per_iter, config.k_total - state.n_labeled, len(state.unlabeled)
    )
    selected = select_topk(pool_scores, state, k_eff)

    sel_set = set(selected)
    new_state = replace(
        state,
        labeled=state.labeled + tuple(selected),
        unlabeled=tuple(i for i in state.unlabeled if i not in sel_set),
        history=state.history
        + (
            HistoryEntry(
                iteration=iteration,
                selected=tuple(selected),
                scores=tuple(float(pool_scores[i]) for i in selected),
                measure=str(config.measure),
                seed=seed_iter
                if config.measure in (Measure.RANDOM, Measure.POWER_BALD)
                else None,
            ),
        ),
    )
    terminal = new_state.n_labeled >= config.k_total or not new_state.unlabeled
    return new_state, terminal
