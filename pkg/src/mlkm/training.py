"""ADDS cross-fitting trainer, joint gradient-descent variant and width rules.

ADDS (alternating direction descent with subsamples) splits the sample into
``L`` folds.  Submodel ``j`` updates layer ``l`` only on fold
``(j + l) mod L`` while every other layer of that submodel is held fixed, and
the final predictor averages the ``L`` submodels.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import IO

import numpy as np

from .errors import DivergenceDetected, DimMismatch, InvalidRate, TooFewSamples
from .network import (Network, Weights, _backprop, _forward_cache, first_layer_features, forward,
                      init_weights)


@dataclass(frozen=True)
class FoldPlan:
    """``L`` disjoint folds of ``range(n)`` and their rotational orders.

    ``rotations[j][l]`` is the fold used by submodel ``j`` for layer ``l``
    (both 0-based), equal to ``(j + l) mod L``.
    """

    n: int
    L: int
    folds: tuple[np.ndarray, ...]

    @property
    def rotations(self) -> list[tuple[int, ...]]:
        return [tuple((j + l) % self.L for l in range(self.L)) for j in range(self.L)]

    def fold_for(self, j: int, l: int) -> np.ndarray:
        return self.folds[(j + l) % self.L]


def make_fold_plan(n: int, L: int, seed: int) -> FoldPlan:
    """Uniformly random partition; when ``L`` does not divide ``n`` the lowest folds get one extra index."""
    if L < 1:
        raise ValueError("L must be >= 1")
    if n < L:
        raise TooFewSamples(f"cannot split {n} samples into {L} nonempty folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = tuple(np.sort(part) for part in np.array_split(perm, L))
    for f in folds:
        f.setflags(write=False)
    return FoldPlan(n, L, folds)


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings.

    ``lr_decay`` shrinks the step as ``learning_rate / (1 + lr_decay * epoch)``.
    ``shared_init`` starts every ADDS submodel from one common draw instead of
    independent draws from the same seed stream.
    """

    learning_rate: float = 1e-2
    ridge: float = 0.0
    patience: int = 50
    improvement_tol: float = 1e-4
    max_epochs: int = 5000
    seed: int = 0
    inner_steps: int = 1
    lr_decay: float = 0.0
    batch_size: int | None = None
    shared_init: bool = False

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if self.patience < 1 or self.max_epochs < 1 or self.inner_steps < 1:
            raise ValueError("patience, max_epochs and inner_steps must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def step_size(self, epoch: int) -> float:
        return self.learning_rate / (1.0 + self.lr_decay * epoch)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    rotation_losses: list[float]
    wall_clock: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


class _Stopper:
    """Stop after ``patience`` epochs without a relative improvement above ``tol``."""

    def __init__(self, patience, tol):
        self.patience, self.tol = patience, tol
        self.best = math.inf
        self.stall = 0

    def update(self, loss) -> bool:
        if loss < self.best * (1.0 - self.tol) or self.best == math.inf:
            self.best = loss
            self.stall = 0
        else:
            self.stall += 1
        return self.stall >= self.patience


@dataclass
class CrossFitModel:
    net: Network
    weights: list[Weights]
    log: list[EpochRecord] = field(default_factory=list)
    converged: bool = True

    @property
    def L(self) -> int:
        return len(self.weights)

    @property
    def epochs(self) -> int:
        return len(self.log)

    def predict(self, X):
        return predict_crossfit(self, X)

    def submodel_predictions(self, X) -> np.ndarray:
        return np.array([forward(self.net, W, X) for W in self.weights])

    def to_dict(self) -> dict:
        return {
            "kind": "crossfit",
            "net": self.net.to_dict(),
            "weights": [W.to_dict() for W in self.weights],
            "converged": self.converged,
            "epochs": self.epochs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CrossFitModel":
        return cls(Network.from_dict(d["net"]), [Weights.from_dict(w) for w in d["weights"]],
                   converged=d.get("converged", True))


def predict_crossfit(model: CrossFitModel, X):
    """Arithmetic mean of the ``L`` submodel outputs."""
    preds = [forward(model.net, W, X) for W in model.weights]
    if np.ndim(preds[0]) == 0:
        return float(sum(preds) / len(preds))
    return np.mean(preds, axis=0)


def _as_xy(data, Y=None):
    if Y is None:
        X, Y = data.X, data.Y
    else:
        X = data
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64).reshape(-1)
    if X.shape[0] != Y.shape[0]:
        raise DimMismatch(f"{X.shape[0]} inputs but {Y.shape[0]} targets")
    if X.shape[0] == 0:
        raise TooFewSamples("empty training set")
    return X, Y


def _layer_step(net, W, H1, Y, layer, ridge, lr):
    """One gradient step on the fold MSE (plus ridge) for one layer group, in place."""
    f, cache = _forward_cache(net, W, None, H1)
    grads = _backprop(net, W, cache, (-2.0 / len(Y)) * (Y - f)[:, None], lowest=layer)
    for i in net.arch.layer_groups()[layer]:
        g = grads[i]
        if ridge:
            g = g + 2.0 * ridge * W.matrices[i]
        W.matrices[i] -= lr * g


def adds_epoch(net: Network, weights: list[Weights], fold_data, config: TrainConfig, lr: float):
    """One ADDS sweep over rotations and layers, updating ``weights`` in place.

    ``fold_data[i]`` holds ``(phi_1(X[fold_i]), Y[fold_i])``.
    """
    L = len(weights)
    for j in range(L):
        for l in range(L):
            Hf, Yf = fold_data[(j + l) % L]
            for _ in range(config.inner_steps):
                _layer_step(net, weights[j], Hf, Yf, l, config.ridge, lr)


def adds_fit(data, net: Network, plan: FoldPlan, config: TrainConfig = TrainConfig(),
             Y=None, log_stream: IO[str] | None = None, initial: list[Weights] | None = None,
             callback=None) -> CrossFitModel:
    """Train ``L`` cross-fitted submodels with ADDS.

    ``data`` is a :class:`~mlkm.simdata.Dataset` or, together with ``Y``, an
    input matrix.  Each epoch visits every rotation ``j`` and every layer
    ``l`` in ascending order and takes ``inner_steps`` gradient steps on
    fold ``(j + l) mod L``.  Training stops once the mean squared error
    averaged over submodels and all ``n`` samples has not improved by a
    relative ``improvement_tol`` for ``patience`` epochs; hitting
    ``max_epochs`` instead sets ``converged = False``.

    Each epoch's record goes to ``log_stream`` as one JSON line, and
    ``callback(epoch, weights)`` runs after every epoch.
    """
    X, Y = _as_xy(data, Y)
    L = net.arch.L
    if plan.L != L:
        raise DimMismatch(f"fold plan has {plan.L} folds but the network has {L} layers")
    if plan.n != X.shape[0]:
        raise DimMismatch(f"fold plan covers {plan.n} samples, data has {X.shape[0]}")
    if initial is None:
        rng = np.random.default_rng(config.seed)
        if config.shared_init:
            base = init_weights(net.arch, rng)
            weights = [base.copy() for _ in range(L)]
        else:
            weights = [init_weights(net.arch, rng) for _ in range(L)]
    else:
        weights = [W.copy() for W in initial]
    H1 = first_layer_features(net, X)
    fold_data = [(H1[f], Y[f]) for f in plan.folds]
    stopper = _Stopper(config.patience, config.improvement_tol)
    log, converged = [], False
    t0 = time.perf_counter()
    for epoch in range(config.max_epochs):
        with np.errstate(over="ignore", invalid="ignore"):
            adds_epoch(net, weights, fold_data, config, config.step_size(epoch))
            rot = [float(np.mean((Y - _forward_cache(net, W, None, H1)[0]) ** 2)) for W in weights]
        loss = float(np.mean(rot))
        if not math.isfinite(loss):
            raise DivergenceDetected(f"overall loss became {loss} at epoch {epoch}")
        rec = EpochRecord(epoch, loss, rot, time.perf_counter() - t0)
        log.append(rec)
        if log_stream is not None:
            log_stream.write(rec.to_json() + "\n")
        if callback is not None:
            callback(epoch, weights)
        if stopper.update(loss):
            converged = True
            break
    return CrossFitModel(net, weights, log, converged)


@dataclass
class SgdResult:
    weights: Weights
    losses: list[float]
    converged: bool

    @property
    def epochs(self) -> int:
        return len(self.losses)


def sgd_fit(data, net: Network, config: TrainConfig = TrainConfig(), Y=None,
            initial: Weights | None = None, trainable: list[int] | None = None) -> SgdResult:
    """Joint descent on ``mean((y - f)^2) + ridge * |W|^2`` over all layers.

    Full-batch by default; ``config.batch_size`` switches to shuffled
    mini-batches.  ``trainable`` restricts updates to the listed matrix
    indices.  ``losses[t]`` is the penalised full-data loss after epoch ``t``.
    """
    X, Y = _as_xy(data, Y)
    rng = np.random.default_rng(config.seed)
    W = init_weights(net.arch, rng) if initial is None else initial.copy()
    idx_train = range(len(W)) if trainable is None else trainable
    H1 = first_layer_features(net, X)
    n = len(Y)
    bs = n if config.batch_size is None else min(config.batch_size, n)
    stopper = _Stopper(config.patience, config.improvement_tol)
    losses, converged = [], False
    for epoch in range(config.max_epochs):
        lr = config.step_size(epoch)
        order = np.arange(n) if bs == n else rng.permutation(n)
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, bs):
                b = order[start:start + bs]
                f, cache = _forward_cache(net, W, None, H1[b])
                grads = _backprop(net, W, cache, (-2.0 / len(b)) * (Y[b] - f)[:, None])
                for i in idx_train:
                    W.matrices[i] -= lr * (grads[i] + 2.0 * config.ridge * W.matrices[i])
            r = Y - _forward_cache(net, W, None, H1)[0]
            loss = float(np.mean(r * r) + config.ridge * W.sq_norm())
        if not math.isfinite(loss):
            raise DivergenceDetected(f"loss became {loss} at epoch {epoch}")
        losses.append(loss)
        if stopper.update(loss):
            converged = True
            break
    return SgdResult(W, losses, converged)


def _exponent(q: float, d: int) -> float:
    if q <= 0 or d < 1:
        raise InvalidRate(f"need q > 0 and d >= 1, got q={q}, d={d}")
    return 1.0 if math.isinf(q) else 2.0 * q / (2.0 * q + d)


def recommend_widths(n: int, layers, c: float = 1.0) -> list[int]:
    """``D_l = ceil(c * n^(2q/(2q+d)) * ln n)``, at least 1, for each ``(q, d)`` in ``layers``."""
    if n < 2:
        raise InvalidRate("n must be >= 2")
    if c <= 0:
        raise InvalidRate("c must be positive")
    return [max(1, math.ceil(c * n ** _exponent(q, d) * math.log(n))) for q, d in layers]


def rate_exponent(layers) -> float:
    """Excess-risk exponent ``min_l (2q_l/(2q_l+d_l)) * prod_{t>l} min(q_t, 1)``."""
    layers = list(layers)
    if not layers:
        raise InvalidRate("need at least one layer")
    exps = [_exponent(q, d) for q, d in layers]
    qs = [q for q, _ in layers]
    return min(e * math.prod(min(q, 1.0) for q in qs[l + 1:]) for l, e in enumerate(exps))
