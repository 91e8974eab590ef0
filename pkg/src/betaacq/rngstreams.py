"""Counter-based random streams.

Every stochastic quantity is drawn from a Philox generator keyed by
(seed, tag, *indices) through a SeedSequence, so any parallel schedule or
worker count reproduces identical values: a stream never depends on how
much randomness other points consumed.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "point_uniform", "point_gumbel", "derive_seed"]

# stable tag ids; never renumber, they are part of the reproducibility contract
TAGS = {
    "random": 1,
    "power_bald": 2,
    "pool": 3,
    "dropout": 4,
    "init": 5,
    "shuffle": 6,
    "dataset": 7,
    "study": 8,
    "loop": 9,
}


def _tag_id(tag):
    try:
        return TAGS[tag]
    except KeyError:
        raise KeyError(f"unknown stream tag {tag!r}; known: {sorted(TAGS)}") from None


def stream(seed, tag, *indices):
    """Generator keyed by (seed, tag, *indices); independent of call order."""
    key = (_tag_id(tag),) + tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def point_uniform(seed, tag, point):
    """One uniform [0, 1) value for a pool point."""
    return float(stream(seed, tag, point).random())


def point_gumbel(seed, tag, point):
    """Standard Gumbel(0, 1) value G = -ln(-ln U) for a pool point."""
    u = point_uniform(seed, tag, point)
    return -np.log(-np.log(max(u, 1e-300)))


def derive_seed(seed, *indices):
    """A 63-bit sub-seed, deterministic in (seed, *indices)."""
    ss = np.random.SeedSequence(
        entropy=int(seed), spawn_key=tuple(int(i) for i in indices)
    )
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
