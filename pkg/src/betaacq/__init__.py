"""Beta-marginal Bayesian active-learning acquisition engine.

Fits per-class Beta marginals to MC-dropout softmax samples and evaluates
the full family of closed-form acquisition measures, centrally the
balanced-entropy acquisition, together with an independent oracle suite
and a desk-scale active-learning simulator.
"""

from .acquisition import (
    AcquisitionScores,
    BalEntOptions,
    Measure,
    score_pool,
)
from .betamodel import (
    BetaMarginals,
    ClampFlag,
    ClampPolicy,
    MomentPair,
    SampleTensor,
    estimate_moments,
    fit_beta,
    fit_pool,
)
from .loop import LoopConfig, PoolState, loop_step, select_topk
from .specfun import QuadratureSpec, beta_entropy, digamma, integrate_01, log_beta, log_gamma

__version__ = "0.1.0"

__all__ = [
    "AcquisitionScores",
    "BalEntOptions",
    "BetaMarginals",
    "ClampFlag",
    "ClampPolicy",
    "LoopConfig",
    "Measure",
    "MomentPair",
    "PoolState",
    "QuadratureSpec",
    "SampleTensor",
    "beta_entropy",
    "digamma",
    "estimate_moments",
    "fit_beta",
    "fit_pool",
    "integrate_01",
    "log_beta",
    "log_gamma",
    "loop_step",
    "score_pool",
    "select_topk",
    "__version__",
]
