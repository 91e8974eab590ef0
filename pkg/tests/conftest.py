import os

import numpy as np
import pytest

from betaacq.betamodel import DEFAULT_CLAMP, BetaMarginals
from betaacq.tensorio import load_model

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures")


def marginals_from_pairs(pairs):
    """BetaMarginals for a single point from [(alpha, beta), ...]."""
    a = np.array([[p[0] for p in pairs]], dtype=np.float64)
    b = np.array([[p[1] for p in pairs]], dtype=np.float64)
    m = a / (a + b)
    v = a * b / ((a + b) ** 2 * (a + b + 1.0))
    flags = np.zeros_like(a, dtype=np.uint8)
    return BetaMarginals(a, b, m, v, flags, DEFAULT_CLAMP)


def marginals_from_arrays(alpha, beta):
    alpha = np.atleast_2d(np.asarray(alpha, dtype=np.float64))
    beta = np.atleast_2d(np.asarray(beta, dtype=np.float64))
    m = alpha / (alpha + beta)
    v = alpha * beta / ((alpha + beta) ** 2 * (alpha + beta + 1.0))
    flags = np.zeros_like(alpha, dtype=np.uint8)
    return BetaMarginals(alpha, beta, m, v, flags, DEFAULT_CLAMP)


@pytest.fixture(scope="session")
def trained_moons_model():
    return load_model(os.path.join(FIXTURE_DIR, "moons_mlp.npz"))
