"""Weighted split-conformal prediction intervals.

Nonconformity scores are ``R_i = |y_i - f(x_i)| / sigma_y(x_i)`` where the
per-point scale comes from a first-order linearisation of the model in its
weights::

    sigma_y(x)^2 = sigma^2 * (g(x)^T (F^T F)^{-1} g(x) + 1)

with ``g(x)`` the weight gradient at ``x``, ``F`` the Jacobian on the fitting
split and ``sigma^2 = |Y - f|^2 / (n' - p)``.  When ``n' <= p`` or ``F^T F``
is ill-conditioned the scale falls back to 1 (plain split conformal).

Predictors are duck-typed: anything with ``predict(X)`` works in unweighted
mode; weighted mode also needs ``jacobian(X) -> (n, p)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateFit, DimMismatch
from .network import Network, Weights, forward, param_jacobian

COND_LIMIT = 1e12


class NetworkPredictor:
    """A single trained network exposed through ``predict``/``jacobian``."""

    def __init__(self, net: Network, weights: Weights):
        self.net = net
        self.weights = weights

    @property
    def num_params(self) -> int:
        return self.weights.num_params

    def predict(self, X):
        return forward(self.net, self.weights, np.atleast_2d(X))

    def jacobian(self, X):
        return param_jacobian(self.net, self.weights, np.atleast_2d(X))


class CrossFitPredictor:
    """Cross-fit average with the submodel weight gradients averaged.

    All ``L`` submodels estimate one parameter vector, so the Jacobian is the
    mean of the per-submodel Jacobians and ``p`` is a single model's count.
    """

    def __init__(self, model):
        self.model = model

    @property
    def num_params(self) -> int:
        return self.model.weights[0].num_params

    def predict(self, X):
        return np.atleast_1d(self.model.predict(np.atleast_2d(X)))

    def jacobian(self, X):
        X = np.atleast_2d(X)
        return sum(param_jacobian(self.model.net, W, X) for W in self.model.weights) / self.model.L


class LinearFeaturePredictor:
    """``f(x) = coef . phi(x)`` for a random-feature ridge model; the Jacobian is ``phi``."""

    def __init__(self, rf_model):
        self.rf = rf_model

    @property
    def num_params(self) -> int:
        return self.rf.coef.size

    def predict(self, X):
        return self.rf.predict(X)

    def jacobian(self, X):
        from .kernels import apply
        return apply(self.rf.fm, np.atleast_2d(X))


def as_predictor(model):
    """Wrap package model types; other objects are returned unchanged."""
    from .baselines import RfRidgeModel
    from .training import CrossFitModel
    if isinstance(model, CrossFitModel):
        return CrossFitPredictor(model)
    if isinstance(model, RfRidgeModel):
        return LinearFeaturePredictor(model)
    return model


@dataclass
class VarianceModel:
    mode: str
    sigma2: float
    gram_inverse: np.ndarray | None
    num_params: int
    n_fit: int
    condition: float = math.nan

    def sigma_y(self, predictor, X) -> np.ndarray:
        """Per-point scale ``sigma_y(x)``; identically 1 in unweighted mode."""
        X = np.atleast_2d(X)
        if self.mode == "unweighted":
            return np.ones(X.shape[0])
        G = as_predictor(predictor).jacobian(X)
        if G.shape[1] != self.num_params:
            raise DimMismatch(f"jacobian has {G.shape[1]} columns, variance model expects {self.num_params}")
        lev = np.einsum("ij,jk,ik->i", G, self.gram_inverse, G)
        return np.sqrt(self.sigma2 * (lev + 1.0))


def fit_variance(predictor, X_fit, Y_fit, mode: str = "auto") -> VarianceModel:
    """Estimate the linearised noise scale on the fitting split.

    ``mode="auto"`` falls back to unweighted when ``n' <= p`` or the Gram
    condition number reaches ``1e12``; ``mode="weighted"`` raises
    ``DegenerateFit`` in those cases instead.
    """
    if mode not in ("auto", "weighted", "unweighted"):
        raise ValueError(f"unknown variance mode {mode!r}")
    predictor = as_predictor(predictor)
    X_fit = np.atleast_2d(np.asarray(X_fit, dtype=np.float64))
    Y_fit = np.asarray(Y_fit, dtype=np.float64).reshape(-1)
    n = X_fit.shape[0]
    if n != Y_fit.shape[0]:
        raise DimMismatch(f"{n} inputs but {Y_fit.shape[0]} targets")
    if n < 2:
        raise DegenerateFit("need at least two fitting points")
    p = getattr(predictor, "num_params", None)
    if mode == "unweighted" or not hasattr(predictor, "jacobian"):
        if mode == "weighted":
            raise DegenerateFit("predictor exposes no jacobian")
        return VarianceModel("unweighted", 1.0, None, p or 0, n)
    F = predictor.jacobian(X_fit)
    p = F.shape[1]
    reason = None
    cond = math.nan
    if n <= p:
        reason = f"n'={n} <= p={p}"
    else:
        gram = F.T @ F
        cond = float(np.linalg.cond(gram))
        if not cond < COND_LIMIT:
            reason = f"Gram condition number {cond:.3g} >= {COND_LIMIT:.0e}"
    if reason is not None:
        if mode == "weighted":
            raise DegenerateFit(reason)
        return VarianceModel("unweighted", 1.0, None, p, n, cond)
    resid = Y_fit - predictor.predict(X_fit)
    sigma2 = float(resid @ resid / (n - p))
    return VarianceModel("weighted", sigma2, np.linalg.inv(gram), p, n, cond)


def quantile_index(m: int, alpha: float) -> int:
    """1-based rank ``ceil((1 - alpha)(m + 1))`` of the calibration quantile."""
    # guard against products like 0.9 * 100 = 90.00000000000001
    return math.ceil((1.0 - alpha) * (m + 1) - 1e-9)


@dataclass
class ConformalCalibration:
    alpha: float
    m: int
    index: int
    vhat: float
    mode: str
    residuals: np.ndarray

    @property
    def unbounded(self) -> bool:
        return self.index > self.m

    def summary(self) -> dict:
        return {"alpha": self.alpha, "m": self.m, "index": self.index,
                "vhat": self.vhat, "mode": self.mode, "unbounded": self.unbounded}


def scores(predictor, variance: VarianceModel, X, Y) -> np.ndarray:
    """Weighted residuals ``|y - f(x)| / sigma_y(x)``."""
    predictor = as_predictor(predictor)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64).reshape(-1)
    return np.abs(Y - predictor.predict(X)) / variance.sigma_y(predictor, X)


def conformal_quantile(residuals, alpha: float) -> tuple[int, float]:
    """``(k, v)``: the ``k``-th smallest residual, or ``inf`` when ``k > m``."""
    residuals = np.asarray(residuals, dtype=np.float64)
    m = residuals.size
    k = quantile_index(m, alpha)
    if k > m:
        return k, math.inf
    return k, float(np.sort(residuals, kind="stable")[k - 1])


def calibrate(predictor, variance: VarianceModel, X_cal, Y_cal, alpha: float) -> ConformalCalibration:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    R = scores(predictor, variance, X_cal, Y_cal)
    if R.size < 1:
        raise ValueError("calibration set is empty")
    k, v = conformal_quantile(R, alpha)
    return ConformalCalibration(float(alpha), int(R.size), k, v, variance.mode, R)


def predict_interval(predictor, variance: VarianceModel, calibration: ConformalCalibration, X):
    """``(lower, upper)`` arrays; an unbounded calibration yields ``(-inf, inf)``."""
    predictor = as_predictor(predictor)
    X2 = np.atleast_2d(np.asarray(X, dtype=np.float64))
    center = np.atleast_1d(predictor.predict(X2))
    if calibration.unbounded:
        return np.full_like(center, -np.inf), np.full_like(center, np.inf)
    half = calibration.vhat * variance.sigma_y(predictor, X2)
    return center - half, center + half


def contains(lower, upper, y) -> np.ndarray:
    return (lower <= y) & (y <= upper)


@dataclass
class CoverageResult:
    scenario: str
    alpha: float
    m: int
    replications: int
    coverage: float
    se: float
    mean_length: float

    @property
    def band(self) -> tuple[float, float]:
        """Finite-sample guarantee ``[1 - alpha, 1 - alpha + 1/(m+1)]``."""
        return 1.0 - self.alpha, 1.0 - self.alpha + 1.0 / (self.m + 1)

    def within_band(self, n_se: float = 3.0) -> bool:
        lo, hi = self.band
        return lo - n_se * self.se <= self.coverage <= hi + n_se * self.se

    def to_dict(self) -> dict:
        out = asdict(self)
        out["band"] = list(self.band)
        return out


class ResidualOracle:
    """Synthetic exchangeable scores: ``m + 1`` i.i.d. draws of ``|noise|``.

    ``dist`` is ``"normal"``, ``"laplace"`` or ``"uniform"`` (all continuous).
    """

    def __init__(self, m: int, dist: str = "normal"):
        if m < 1:
            raise ValueError("m must be >= 1")
        if dist not in ("normal", "laplace", "uniform"):
            raise ValueError(f"unknown residual law {dist!r}")
        self.m = m
        self.dist = dist
        self.name = f"residual-oracle-{dist}"

    def _draw(self, rng, size):
        if self.dist == "normal":
            return rng.standard_normal(size)
        if self.dist == "laplace":
            return rng.laplace(size=size)
        return rng.uniform(-1.0, 1.0, size=size)

    def replicate(self, alpha: float, rng: np.random.Generator) -> tuple[float, float]:
        cal = np.abs(self._draw(rng, self.m))
        _, v = conformal_quantile(cal, alpha)
        test = abs(self._draw(rng, 1)[0])
        return float(test <= v), 2.0 * v


def coverage_study(scenario, alpha: float, replications: int, seed: int) -> CoverageResult:
    """Monte-Carlo coverage of a conformal procedure.

    ``scenario.replicate(alpha, rng)`` runs one independent replication and
    returns ``(covered_fraction, band_length)``; each replication receives
    its own child seed.  The standard error is the spread of the
    per-replication coverage over ``sqrt(R)``, which reduces to the binomial
    SE when every replication scores a single test point.
    """
    if replications < 1:
        raise ValueError("need at least one replication")
    children = np.random.SeedSequence(seed).spawn(replications)
    cov, length = np.empty(replications), np.empty(replications)
    for r, child in enumerate(children):
        cov[r], length[r] = scenario.replicate(alpha, np.random.default_rng(child))
    c = float(cov.mean())
    return CoverageResult(getattr(scenario, "name", type(scenario).__name__), float(alpha), int(scenario.m),
                          replications, c, float(cov.std() / math.sqrt(replications)), float(length.mean()))
