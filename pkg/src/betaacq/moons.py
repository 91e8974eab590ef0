"""Desk-scale end-to-end demonstration on a 3-class moons dataset.

A small dropout MLP (2 -> 72 -> 72 -> 72 -> 3, dropout 0.2 on the second
and third hidden layers, bias-free output) is trained natively with
backpropagation and Adam. Keeping dropout active at inference yields the
MC sample tensors the acquisition engine consumes; dropout masks come from
per-point counter-based streams so grid scoring is deterministic under any
point-parallel schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .acquisition import (
    BalEntOptions,
    Measure,
    _mjent,
    score_pool,
)
from .betamodel import SampleTensor, fit_pool
from .loop import LoopConfig, PoolState, loop_step
from .rngstreams import derive_seed, stream

__all__ = [
    "MoonsDataset",
    "MlpModel",
    "TrainConfig",
    "TrainingDivergedError",
    "make_moons3",
    "train",
    "predict_probs",
    "mc_forward",
    "grid_scores",
    "run_experiment",
    "gradient_check",
]

LAYER_SIZES = (2, 72, 72, 72, 3)
DROPOUT_RATE = 0.2
ARC_X_STEP = 0.5
ARC_Y_STEP = -0.35


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class MoonsDataset:
    points: np.ndarray
    labels: np.ndarray
    noise_sd: float
    seed: int

    @property
    def n(self):
        return len(self.labels)


def arc_reference(k, theta):
    """Noise-free coordinates on arc k at angle theta."""
    sign = 1.0 if k % 2 == 0 else -1.0
    x = np.cos(theta) + ARC_X_STEP * k
    y = sign * np.sin(theta) + ARC_Y_STEP * k
    return x, y


def make_moons3(n_per_class, noise_sd, seed):
    """Three interleaved unit half-circle arcs with isotropic Gaussian noise.

    Arc k spans angles [0, pi), alternates opening direction like the
    classic two moons, and is offset by (0.5 k, -0.35 k).
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    points = np.empty((3 * n_per_class, 2), dtype=np.float64)
    labels = np.empty(3 * n_per_class, dtype=np.int64)
    for k in range(3):
        g = stream(seed, "dataset", k)
        theta = g.uniform(0.0, np.pi, n_per_class)
        x, y = arc_reference(k, theta)
        sl = slice(k * n_per_class, (k + 1) * n_per_class)
        points[sl, 0] = x
        points[sl, 1] = y
        if noise_sd > 0.0:
            points[sl] += g.normal(0.0, noise_sd, (n_per_class, 2))
        labels[sl] = k
    return MoonsDataset(points, labels, float(noise_sd), int(seed))


@dataclass
class MlpModel:
    """Weights of the toy dropout MLP; final layer is bias-free."""

    weights: list[np.ndarray]
    biases: list[np.ndarray | None]
    dropout_rate: float = DROPOUT_RATE

    @classmethod
    def init(cls, seed):
        weights, biases = [], []
        for li in range(len(LAYER_SIZES) - 1):
            g = stream(seed, "init", li)
            fan_in, fan_out = LAYER_SIZES[li], LAYER_SIZES[li + 1]
            weights.append(g.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)))
            biases.append(
                np.zeros(fan_out) if li < len(LAYER_SIZES) - 2 else None
            )
        return cls(weights, biases)

    def copy(self):
        return MlpModel(
            [w.copy() for w in self.weights],
            [None if b is None else b.copy() for b in self.biases],
            self.dropout_rate,
        )

    def parameters(self):
        for w in self.weights:
            yield w
        for b in self.biases:
            if b is not None:
                yield b


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 128
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0.0:
            raise ValueError("invalid training hyperparameters")


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(model, x, masks):
    """Forward pass; masks are inverted-dropout multipliers or None."""
    w, b = model.weights, model.biases
    h1 = np.maximum(x @ w[0] + b[0], 0.0)
    z2 = h1 @ w[1] + b[1]
    if masks is not None:
        z2 = z2 * masks[0]
    h2 = np.maximum(z2, 0.0)
    z3 = h2 @ w[2] + b[2]
    if masks is not None:
        z3 = z3 * masks[1]
    h3 = np.maximum(z3, 0.0)
    logits = h3 @ w[3]
    return logits, (x, h1, z2, h2, z3, h3)


def _backward(model, cache, masks, probs, onehot):
    x, h1, z2, h2, z3, h3 = cache
    w = model.weights
    n = x.shape[0]
    dlogits = (probs - onehot) / n
    gw3 = h3.T @ dlogits
    dh3 = dlogits @ w[3].T
    dz3 = dh3 * (z3 > 0.0)
    if masks is not None:
        dz3 = dz3 * masks[1]
    gw2 = h2.T @ dz3
    gb2 = dz3.sum(axis=0)
    dh2 = dz3 @ w[2].T
    dz2 = dh2 * (z2 > 0.0)
    if masks is not None:
        dz2 = dz2 * masks[0]
    gw1 = h1.T @ dz2
    gb1 = dz2.sum(axis=0)
    dh1 = dz2 @ w[1].T
    dz1 = dh1 * (h1 > 0.0)
    gw0 = x.T @ dz1
    gb0 = dz1.sum(axis=0)
    return [gw0, gw1, gw2, gw3], [gb0, gb1, gb2, None]


def _dropout_masks(g, n, rate):
    if rate <= 0.0:
        return None
    keep = 1.0 - rate
    m0 = (g.random((n, LAYER_SIZES[2])) >= rate) / keep
    m1 = (g.random((n, LAYER_SIZES[3])) >= rate) / keep
    return m0, m1


def cross_entropy(logits, labels):
    probs = _softmax(logits)
    n = len(labels)
    return float(-np.log(np.maximum(probs[np.arange(n), labels], 1e-300)).mean())


def train(model, data, config):
    """Train a copy of the model with Adam; dropout stays active.

    Returns the trained copy (zero epochs returns an unchanged copy).
    Raises TrainingDivergedError if the loss becomes non-finite.
    """
    model = model.copy()
    x, y = data.points, data.labels
    n = len(y)
    onehot_all = np.eye(LAYER_SIZES[-1])[y]

    params_w = model.weights
    params_b = model.biases
    m_w = [np.zeros_like(w) for w in params_w]
    v_w = [np.zeros_like(w) for w in params_w]
    m_b = [None if b is None else np.zeros_like(b) for b in params_b]
    v_b = [None if b is None else np.zeros_like(b) for b in params_b]
    t = 0

    for epoch in range(config.epochs):
        g_shuffle = stream(config.seed, "shuffle", epoch)
        order = g_shuffle.permutation(n)
        for bi, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            xb, yb = x[idx], onehot_all[idx]
            g_drop = stream(config.seed, "dropout", epoch, bi)
            masks = _dropout_masks(g_drop, len(idx), model.dropout_rate)
            logits, cache = _forward(model, xb, masks)
            probs = _softmax(logits)
            loss = -np.log(
                np.maximum((probs * yb).sum(axis=1), 1e-300)
            ).mean()
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}"
                )
            gw, gb = _backward(model, cache, masks, probs, yb)
            t += 1
            lr_t = config.learning_rate * np.sqrt(
                1.0 - config.beta2**t
            ) / (1.0 - config.beta1**t)
            for pi in range(4):
                m_w[pi] = config.beta1 * m_w[pi] + (1 - config.beta1) * gw[pi]
                v_w[pi] = config.beta2 * v_w[pi] + (1 - config.beta2) * gw[pi] ** 2
                params_w[pi] -= lr_t * m_w[pi] / (np.sqrt(v_w[pi]) + config.eps)
                if params_b[pi] is not None:
                    m_b[pi] = config.beta1 * m_b[pi] + (1 - config.beta1) * gb[pi]
                    v_b[pi] = config.beta2 * v_b[pi] + (1 - config.beta2) * gb[pi] ** 2
                    params_b[pi] -= lr_t * m_b[pi] / (np.sqrt(v_b[pi]) + config.eps)
    return model


def predict_probs(model, points):
    """Deterministic softmax probabilities (dropout off)."""
    logits, _ = _forward(model, np.asarray(points, dtype=np.float64), None)
    return _softmax(logits)


# fixed forward-pass block size: BLAS rounding depends on batch shape, so a
# caller-visible chunking knob would break bit-reproducibility
_MC_CHUNK = 2048


def mc_forward(model, points, m_draws, seed):
    """MC-dropout sample tensor for a batch of points.

    Each point's dropout masks come from its own stream keyed by
    (seed, point coordinates); draw d consumes the d-th mask block.
    Keying on the coordinate bits makes duplicated rows reproduce
    identical draws and keeps results independent of any point-parallel
    schedule. Points are pushed through the network in fixed-size blocks
    so the same call always reproduces the same bits.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    c = LAYER_SIZES[-1]
    out = np.empty((n, m_draws, c), dtype=np.float64)
    rate = model.dropout_rate
    coord_bits = points.view(np.uint64)
    chunk_points = max(1, _MC_CHUNK // max(1, m_draws))
    for lo in range(0, n, chunk_points):
        hi = min(lo + chunk_points, n)
        nn = hi - lo
        if rate > 0.0:
            m0 = np.empty((nn, m_draws, LAYER_SIZES[2]))
            m1 = np.empty((nn, m_draws, LAYER_SIZES[3]))
            for i in range(lo, hi):
                g = stream(seed, "dropout", *coord_bits[i])
                mm = _dropout_masks(g, m_draws, rate)
                m0[i - lo], m1[i - lo] = mm[0], mm[1]
            masks = (
                m0.reshape(nn * m_draws, -1),
                m1.reshape(nn * m_draws, -1),
            )
        else:
            masks = None
        tiled = np.repeat(points[lo:hi], m_draws, axis=0)
        logits, _ = _forward(model, tiled, masks)
        out[lo:hi] = _softmax(logits).reshape(nn, m_draws, c)
    return SampleTensor(out, validate=False)


def gradient_check(model, points, labels, seed=0, n_params=10, delta=1e-5):
    """Max relative error of backprop vs central differences, masks frozen."""
    x = np.asarray(points, dtype=np.float64)
    onehot = np.eye(LAYER_SIZES[-1])[labels]
    g = stream(seed, "dropout", 0)
    masks = _dropout_masks(g, len(x), model.dropout_rate)

    def loss_at(m):
        logits, _ = _forward(m, x, masks)
        probs = _softmax(logits)
        return -np.log(np.maximum((probs * onehot).sum(axis=1), 1e-300)).mean()

    logits, cache = _forward(model, x, masks)
    probs = _softmax(logits)
    gw, gb = _backward(model, cache, masks, probs, onehot)
    analytic = gw + [b for b in gb if b is not None]
    tensors = model.weights + [b for b in model.biases if b is not None]

    picker = stream(seed, "init", 999)
    worst = 0.0
    for _ in range(n_params):
        ti = int(picker.integers(len(tensors)))
        flat = tensors[ti].ravel()
        pi = int(picker.integers(flat.size))
        orig = flat[pi]
        flat[pi] = orig + delta
        up = loss_at(model)
        flat[pi] = orig - delta
        down = loss_at(model)
        flat[pi] = orig
        numeric = (up - down) / (2.0 * delta)
        exact = analytic[ti].ravel()[pi]
        scale = max(abs(numeric), abs(exact), 1e-8)
        worst = max(worst, abs(numeric - exact) / scale)
    return worst


@dataclass(frozen=True)
class GridScores:
    xs: np.ndarray
    ys: np.ndarray
    scores: np.ndarray
    balent_sign: np.ndarray
    measure: str


def grid_scores(model, bounds, resolution, measure, options=None, seed=0, m_draws=100):
    """Score a lattice over bounds; also records the sign of BalEnt per cell.

    bounds is ((xmin, xmax), (ymin, ymax)); resolution is cells per axis.
    """
    (x0, x1), (y0, y1) = bounds
    res_x, res_y = (
        resolution if isinstance(resolution, tuple) else (resolution, resolution)
    )
    gx = np.linspace(x0, x1, res_x)
    gy = np.linspace(y0, y1, res_y)
    xs, ys = np.meshgrid(gx, gy, indexing="ij")
    cells = np.column_stack([xs.ravel(), ys.ravel()])
    samples = mc_forward(model, cells, m_draws, seed)
    scored = score_pool(samples, measure, options, seed=derive_seed(seed, 8, 1))
    marg = fit_pool(samples)
    sign = np.where(_mjent(marg.alpha, marg.beta) >= 0.0, 1, -1)
    return GridScores(cells[:, 0], cells[:, 1], scored.scores, sign, str(Measure(measure)))


@dataclass(frozen=True)
class CurvePoint:
    measure: str
    repeat: int
    iteration: int
    n_labeled: int
    accuracy: float


def _accuracy(model, points, labels):
    pred = predict_probs(model, points).argmax(axis=1)
    return float((pred == labels).mean())


def run_experiment(
    dataset,
    test_set,
    measures,
    k_per_iter,
    n_iterations,
    train_config,
    m_draws=100,
    n_initial=15,
    repeats=3,
    seed=0,
    options=None,
):
    """Full Algorithm-1 runs: retrain from scratch, score, select, record.

    Returns a list of CurvePoint rows (one per measure, repeat and
    iteration, including iteration 0 on the initial labeled set).
    """
    options = options or BalEntOptions()
    rows = []
    for measure in measures:
        measure = Measure(measure)
        for rep in range(repeats):
            run_seed = derive_seed(seed, 8, rep)
            g = stream(run_seed, "loop", 0)
            initial = g.choice(dataset.n, size=n_initial, replace=False)
            state = PoolState.fresh(dataset.n, initial)
            config = LoopConfig(
                k_per_iter=k_per_iter,
                k_total=n_initial + k_per_iter * n_iterations,
                measure=measure,
                options=options,
                seed=run_seed,
            )
            done = False
            for it in range(n_iterations + 1):
                labeled_idx = np.asarray(state.labeled, dtype=np.int64)
                sub = MoonsDataset(
                    dataset.points[labeled_idx],
                    dataset.labels[labeled_idx],
                    dataset.noise_sd,
                    dataset.seed,
                )
                model = train(
                    MlpModel.init(derive_seed(run_seed, 5, it)),
                    sub,
                    replace(train_config, seed=derive_seed(run_seed, 6, it)),
                )
                rows.append(
                    CurvePoint(
                        str(measure),
                        rep,
                        it,
                        state.n_labeled,
                        _accuracy(model, test_set.points, test_set.labels),
                    )
                )
                if it == n_iterations or done:
                    break
                unl = np.asarray(state.unlabeled, dtype=np.int64)
                samples = mc_forward(
                    model,
                    dataset.points[unl],
                    m_draws,
                    derive_seed(run_seed, 7, it),
                )
                state, done = loop_step(state, samples, config)
    return rows
