"""Independent verification lab.

Cross-checks the closed-form acquisition measures against references that
do not share their code path: tanh-sinh quadrature of the defining
integrals, the analytic Dirichlet mutual-information formula, and plain MC
estimates on synthetic pools. Also hosts the desk-scale rank-correlation
and RMSE studies.

The quadrature reference builds its Beta-density normalizers from the C
library lgamma, not from the native kernel it is checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import specfun
from .acquisition import Measure, score_pool
from .betamodel import SampleTensor
from .rngstreams import derive_seed, stream
from .specfun import QuadratureSpec, integrate_01

__all__ = [
    "SyntheticPoolSpec",
    "PairCorrelation",
    "CorrelationReport",
    "UndefinedCorrelationError",
    "dirichlet_bald",
    "quadrature_beta_entropy",
    "quadrature_mjent",
    "generate_pool",
    "spearman",
    "rank_correlation_study",
    "rmse_study",
    "random_simplex_marginals",
    "sign_experiment",
    "mc_dirichlet_bald",
    "CheckResult",
    "run_battery",
]

ORACLE_QUAD_SPEC = QuadratureSpec(abs_tol=1e-10, max_subdivisions=12)


class UndefinedCorrelationError(ValueError):
    """Spearman correlation is undefined for zero-variance ranks."""


@dataclass(frozen=True)
class SyntheticPoolSpec:
    """Synthetic pool generator settings.

    dirichlet: per point, concentrations are log-uniform over
    exp(concentration_log_range) and draws are Dirichlet. softmax_gaussian:
    per point a Gaussian mean logit vector, per draw Gaussian noise added
    before the softmax.
    """

    kind: str
    n_points: int
    n_draws: int
    n_classes: int
    concentration_log_range: tuple[float, float] = (math.log(0.1), math.log(10.0))
    # mean-logit spread 3 keeps pool points heterogeneous in confidence; a
    # unit spread makes every point near-maximally uncertain at large C,
    # collapsing the between-point BALD spread below the MC noise floor
    logit_mean_sd: float = 3.0
    logit_noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "softmax_gaussian"):
            raise ValueError(f"unknown pool kind {self.kind!r}")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.n_points < 1 or self.n_draws < 1:
            raise ValueError("n_points and n_draws must be positive")
        lo, hi = self.concentration_log_range
        if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
            raise ValueError("concentration_log_range must be finite with lo <= hi")
        if self.logit_mean_sd <= 0.0 or self.logit_noise_sd <= 0.0:
            raise ValueError("logit scales must be positive")


@dataclass(frozen=True)
class PairCorrelation:
    measure_a: str
    measure_b: str
    rho_mean: float
    rho_sd: float | None
    rho_values: tuple[float, ...]


@dataclass(frozen=True)
class CorrelationReport:
    n_points: int
    n_classes: int
    repeats: int
    pairs: tuple[PairCorrelation, ...] = field(default_factory=tuple)


def dirichlet_bald(eta):
    """Analytic mutual information for a Dirichlet predictive distribution.

    Evaluated term by term, with the B(eta(i,++)) / B(eta) ratios taken as
    exponentials of log-beta differences.
    """
    eta = np.asarray(eta, dtype=np.float64)
    if eta.ndim != 1 or eta.size < 2:
        raise ValueError("eta must be a vector of length >= 2")
    if not np.all(np.isfinite(eta)) or np.any(eta <= 0.0):
        raise specfun.DomainError("Dirichlet concentrations must be positive")
    s = float(eta.sum())
    c = eta.size
    psi_eta = specfun.digamma(eta)
    psi_s1 = specfun.digamma(s + 1.0)
    # log B(eta(i,++)) - log B(eta): only the bumped terms survive, and the
    # Gamma recurrence reduces them to log(eta_i) - log(s). Raw log-gamma
    # differences at s ~ 1e3 would cost ~1e-9 of the 1e-10 budget.
    log_ratio = np.log(eta) - math.log(s)
    ratio = np.exp(log_ratio)

    t1 = (s - c) * specfun.digamma(s)
    t2 = -float(((eta - 1.0) * psi_eta).sum())
    p = eta / s
    t3 = -float((p * np.log(p)).sum())
    inner_full = float(((eta - 1.0) * (psi_eta - psi_s1)).sum())
    inner = inner_full - (eta - 1.0) * (psi_eta - psi_s1)
    t4 = float((ratio * inner).sum())
    t5 = float((eta * ratio * (specfun.digamma(eta + 1.0) - psi_s1)).sum())
    return t1 + t2 + t3 + t4 + t5


def _beta_log_density_terms(a, b):
    # normalizer from the C library, independent of the native kernel
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def quadrature_beta_entropy(a, b, spec=ORACLE_QUAD_SPEC):
    """-integral of f log f over the Beta(a, b) density, by quadrature.

    The upper-endpoint singularity is handled through the exact reflection
    f_{a,b}(1 - u) = f_{b,a}(u).
    """
    if not (0.0 < a and 0.0 < b):
        raise specfun.DomainError("a and b must be positive")
    log_b = _beta_log_density_terms(a, b)

    def neg_flogf(p, aa, bb):
        logf = (aa - 1.0) * np.log(p) + (bb - 1.0) * np.log1p(-p) - log_b
        return -np.exp(logf) * logf

    return integrate_01(
        lambda p: neg_flogf(p, a, b),
        spec,
        reflected=lambda u: neg_flogf(u, b, a),
    )


def quadrature_mjent(alpha, beta, spec=ORACLE_QUAD_SPEC):
    """Marginalized joint entropy by direct quadrature.

    Sums -integral of p f(p) log(p f(p)) over classes, where f is the
    Beta(alpha_i, beta_i) density of each marginal.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    total = 0.0
    for a, b in zip(alpha.ravel(), beta.ravel()):
        log_b = _beta_log_density_terms(a, b)

        def lower(p):
            logq = a * np.log(p) + (b - 1.0) * np.log1p(-p) - log_b
            return -np.exp(logq) * logq

        def upper(u):
            logq = a * np.log1p(-u) + (b - 1.0) * np.log(u) - log_b
            return -np.exp(logq) * logq

        total += integrate_01(lower, spec, reflected=upper)
    return total


def generate_pool(spec, repeat=0):
    """Synthetic sample tensor, deterministic in (spec.seed, repeat, point)."""
    if not isinstance(spec, SyntheticPoolSpec):
        raise TypeError("spec must be a SyntheticPoolSpec")
    n, m, c = spec.n_points, spec.n_draws, spec.n_classes
    out = np.empty((n, m, c), dtype=np.float64)
    lo, hi = spec.concentration_log_range
    for i in range(n):
        g = stream(spec.seed, "pool", repeat, i)
        if spec.kind == "dirichlet":
            eta = np.exp(g.uniform(lo, hi, c))
            out[i] = g.dirichlet(eta, size=m)
        else:
            mu = g.normal(0.0, spec.logit_mean_sd, c)
            logits = mu + g.normal(0.0, spec.logit_noise_sd, (m, c))
            logits -= logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            out[i] = e / e.sum(axis=1, keepdims=True)
    return SampleTensor(out, validate=False)


def _average_ranks(v):
    v = np.asarray(v, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    sorted_v = v[order]
    n = v.size
    # average rank within each tie group
    boundaries = np.flatnonzero(np.diff(sorted_v) != 0.0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [n]))
    ranks_sorted = np.empty(n, dtype=np.float64)
    for s, e in zip(starts, ends):
        ranks_sorted[s:e] = 0.5 * (s + e - 1) + 1.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = ranks_sorted
    return ranks


def spearman(x, y):
    """Spearman rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d vectors of equal length")
    if x.size < 3:
        raise ValueError("need at least 3 observations")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float((rx * rx).sum()) * float((ry * ry).sum()))
    if denom == 0.0:
        raise UndefinedCorrelationError("constant ranks; correlation undefined")
    return float((rx * ry).sum()) / denom


def _pairs(measures):
    out = []
    for i in range(len(measures)):
        for j in range(i + 1, len(measures)):
            out.append((measures[i], measures[j]))
    return out


def rank_correlation_study(spec, measures, repeats):
    """Pairwise Spearman correlations of measures over repeated pools."""
    if spec.n_points < 50:
        raise ValueError("need at least 50 pool points for a stable rank study")
    measures = [Measure(m) for m in measures]
    values = {p: [] for p in _pairs(measures)}
    for r in range(repeats):
        pool = generate_pool(spec, repeat=r)
        seed_r = derive_seed(spec.seed, 101, r)
        scored = {
            m: score_pool(pool, m, seed=seed_r if m in (Measure.RANDOM, Measure.POWER_BALD) else None).scores
            for m in measures
        }
        for a, b in values:
            values[(a, b)].append(spearman(scored[a], scored[b]))
    pairs = []
    for (a, b), rhos in values.items():
        arr = np.asarray(rhos)
        sd = float(arr.std(ddof=1)) if repeats > 1 else None
        pairs.append(
            PairCorrelation(str(a), str(b), float(arr.mean()), sd, tuple(arr))
        )
    return CorrelationReport(spec.n_points, spec.n_classes, repeats, tuple(pairs))


def rmse_study(spec, repeats):
    """RMSE and Spearman between the MC and Beta-marginal BALD estimates."""
    rmses, rhos = [], []
    for r in range(repeats):
        pool = generate_pool(spec, repeat=r)
        mc = score_pool(pool, Measure.MC_BALD).scores
        bm = score_pool(pool, Measure.BETA_MARGINAL_BALD).scores
        rmses.append(float(np.sqrt(np.mean((mc - bm) ** 2))))
        rhos.append(spearman(mc, bm))
    return float(np.mean(rmses)), float(np.mean(rhos))


def random_simplex_marginals(n_classes, seed, index, mean_floor=0.02):
    """One marginal set whose Beta means form an exact probability vector.

    Means come from a flat Dirichlet pushed away from the boundary (the
    identities under test are exact only when no clamp fires), and each
    variance is a uniform fraction of its Beta-representable maximum,
    capped so min(alpha, beta) >= 0.05 stays inside the quadrature
    oracle's singularity contract.
    """
    g = stream(seed, "study", index)
    m = g.dirichlet(np.ones(n_classes))
    m = (m + mean_floor) / (1.0 + n_classes * mean_floor)
    # fraction of the max variance; alpha+beta = 1/frac - 1, so the cap
    # keeps (1/frac - 1) * min(m, 1-m) >= 0.05
    hi = np.minimum(0.8, 1.0 / (1.0 + 0.05 / np.minimum(m, 1.0 - m)))
    lo = np.minimum(0.05, 0.5 * hi)
    frac = g.uniform(lo, hi)
    var = frac * m * (1.0 - m)
    alpha = m * m * (1.0 - m) / var - m
    beta = (1.0 / m - 1.0) * alpha
    return alpha, beta


@dataclass(frozen=True)
class SignExperimentResult:
    """Quadrature vs both posterior-entropy sign conventions."""

    n_sets: int
    max_error_standard: float
    max_error_printed_variant: float


def sign_experiment(n_sets=100, seed=20240, n_classes=3, spec=ORACLE_QUAD_SPEC):
    """Decide the posterior-entropy sign question by quadrature.

    Compares the directly integrated marginalized joint entropy against
    the per-class decomposition sum(m_i [h(Beta(a_i+1, b_i)) - log m_i])
    under (a) the standard Beta differential entropy and (b) the variant
    with the flipped (a+b-1) psi(a+b+1) sign.
    """
    from .acquisition import _mjent_a3_path, _mjent_printed_variant

    worst_std = 0.0
    worst_printed = 0.0
    for i in range(n_sets):
        alpha, beta = random_simplex_marginals(n_classes, seed, i)
        quad = quadrature_mjent(alpha, beta, spec)
        a2 = alpha[None, :]
        b2 = beta[None, :]
        std = float(_mjent_a3_path(a2, b2)[0])
        printed = float(_mjent_printed_variant(a2, b2)[0])
        worst_std = max(worst_std, abs(quad - std))
        worst_printed = max(worst_printed, abs(quad - printed))
    return SignExperimentResult(n_sets, worst_std, worst_printed)


def mc_dirichlet_bald(eta, m_draws, seed, n_batches=10):
    """MC estimate of the Dirichlet mutual information, with a standard error.

    The estimate is computed on n_batches disjoint batches; the returned
    standard error is the batch standard deviation over sqrt(n_batches).
    """
    eta = np.asarray(eta, dtype=np.float64)
    g = stream(seed, "study", 7001)
    per = max(2, m_draws // n_batches)
    vals = []
    for _ in range(n_batches):
        draws = g.dirichlet(eta, size=per)
        mean = draws.mean(axis=0)
        h_mean = float(-(mean * np.log(mean)).sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(draws > 0.0, draws * np.log(draws), 0.0)
        h_draws = float(-plogp.sum(axis=1).mean())
        vals.append(h_mean - h_draws)
    vals = np.asarray(vals)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_batches))


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""


def run_battery(full=False, seed=1234):
    """The oracle invariant battery used by the oracle-check command.

    Returns a list of CheckResult. `full` runs acceptance-scale set sizes.
    """
    from . import acquisition as acq
    from .betamodel import BetaMarginals, DEFAULT_CLAMP

    checks = []
    g = stream(seed, "study", 9999)

    # digamma recurrence (sensitive to any kernel perturbation)
    x = g.uniform(1e-12, 100.0, 1000)
    x = x[x > 0]
    rec = np.abs(specfun.digamma(x + 1.0) - specfun.digamma(x) - 1.0 / x)
    checks.append(
        CheckResult("digamma_recurrence", float(rec.max()) <= 1e-12,
                    float(rec.max()), 1e-12)
    )

    # closed-form beta entropy vs quadrature
    n_quad = 1000 if full else 200
    a = g.uniform(0.05, 500.0, n_quad)
    b = g.uniform(0.05, 500.0, n_quad)
    closed = specfun.beta_entropy(a, b)
    worst = 0.0
    for i in range(n_quad):
        worst = max(worst, abs(closed[i] - quadrature_beta_entropy(a[i], b[i])))
    checks.append(
        CheckResult("beta_entropy_vs_quadrature", worst <= 1e-6, worst, 1e-6,
                    f"{n_quad} random (a,b) in [0.05, 500]^2")
    )

    # decomposition identity on simplex-consistent marginals
    n_dec = 10000 if full else 2000
    worst = 0.0
    for c in (2, 10, 100):
        per = n_dec // 3
        al = np.empty((per, c))
        be = np.empty((per, c))
        for i in range(per):
            al[i], be[i] = random_simplex_marginals(c, seed + c, i)
        bald = acq._bald(al, be)
        alea = acq._aleatoric(al, be)
        ent = acq._entropy(al, be)
        worst = max(worst, float(np.abs(bald + alea - ent).max()))
    checks.append(
        CheckResult("bald_aleatoric_decomposition", worst <= 1e-9, worst, 1e-9)
    )

    # Dirichlet substitution consistency
    worst = 0.0
    n_eta = 1000 if full else 200
    for c in (2, 5, 10, 100):
        for i in range(n_eta // 4):
            eta = np.exp(g.uniform(math.log(0.1), math.log(10.0), c))
            s = eta.sum()
            al, be = eta[None, :], (s - eta)[None, :]
            m = al / (al + be)
            v = al * be / ((al + be) ** 2 * (al + be + 1))
            marg = BetaMarginals(al, be, m, v, np.zeros_like(al, dtype=np.uint8),
                                 DEFAULT_CLAMP)
            worst = max(worst, abs(dirichlet_bald(eta)
                                   - acq.beta_marginal_bald(marg, 0)))
    checks.append(
        CheckResult("dirichlet_consistency", worst <= 1e-10, worst, 1e-10)
    )

    # mjent dual path
    worst = 0.0
    for i in range(200):
        al, be = random_simplex_marginals(4, seed + 7, i)
        a2, b2 = al[None, :], be[None, :]
        worst = max(worst, abs(float(acq._mjent(a2, b2)[0])
                               - float(acq._mjent_a3_path(a2, b2)[0])))
    checks.append(CheckResult("mjent_dual_path", worst <= 1e-10, worst, 1e-10))

    # posterior-entropy sign experiment
    res = sign_experiment(n_sets=100, seed=seed + 11)
    checks.append(
        CheckResult(
            "mjent_vs_quadrature_sign", res.max_error_standard <= 1e-6,
            res.max_error_standard, 1e-6,
            f"printed-sign variant disagrees by up to "
            f"{res.max_error_printed_variant:.6g}",
        )
    )

    # analytic Dirichlet BALD vs MC estimate
    worst_z = 0.0
    for c in (2, 5, 10):
        eta = np.exp(g.uniform(math.log(0.3), math.log(3.0), c))
        est, se = mc_dirichlet_bald(eta, 10000, seed + c)
        worst_z = max(worst_z, abs(est - dirichlet_bald(eta)) / max(se, 1e-12))
    checks.append(
        CheckResult("dirichlet_bald_vs_mc", worst_z <= 3.0, worst_z, 3.0,
                    "z-score at M=10^4, C in {2, 5, 10}")
    )

    # balent upper bound at k=1
    worst = -np.inf
    for i in range(500):
        al, be = random_simplex_marginals(3, seed + 13, i)
        worst = max(worst, float(acq._balent(al[None, :], be[None, :],
                                             acq.BalEntOptions())[0]))
    checks.append(
        CheckResult("balent_upper_bound", worst <= 1.0 + 1e-9, worst, 1.0 + 1e-9)
    )

    if full:
        spec_a10 = SyntheticPoolSpec("dirichlet", 100, 10000, 10, seed=seed + 17)
        rmse10, rho10 = rmse_study(spec_a10, repeats=3)
        checks.append(
            CheckResult("rmse_dirichlet_c10", rmse10 < 0.01 and rho10 > 0.96,
                        rmse10, 0.01, f"spearman {rho10:.4f}")
        )
    return checks
