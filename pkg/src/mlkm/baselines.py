"""Exact kernel ridge regression and single-layer random-feature ridge regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DimMismatch, SingularSystem, TooFewSamples
from .kernels import FeatureMap, KernelSpec, apply, kernel_matrix

RESIDUAL_TOL = 1e-8


def spd_solve(A: np.ndarray, b: np.ndarray, check_tol: float | None = RESIDUAL_TOL) -> np.ndarray:
    """Solve ``A x = b`` for symmetric PSD ``A`` via Cholesky.

    On factorisation failure the diagonal is lifted once by ``1e-10 * trace / n``.
    If that still fails, or the solution leaves a residual above
    ``check_tol * |b|`` for the *original* system, ``SingularSystem`` is raised.
    """
    n = A.shape[0]
    try:
        x = linalg.cho_solve(linalg.cho_factor(A, lower=True), b)
    except linalg.LinAlgError:
        jitter = 1e-10 * np.trace(A) / n
        try:
            x = linalg.cho_solve(linalg.cho_factor(A + jitter * np.eye(n), lower=True), b)
        except linalg.LinAlgError as exc:
            raise SingularSystem("matrix is not positive definite even after jitter") from exc
    if check_tol is not None:
        res = np.linalg.norm(A @ x - b)
        if not np.isfinite(res) or res > check_tol * max(np.linalg.norm(b), 1e-300):
            raise SingularSystem(f"linear system is numerically singular (residual {res:.3g})")
    return x


def _xy(X, Y):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64).reshape(-1)
    if X.shape[0] != Y.shape[0]:
        raise DimMismatch(f"{X.shape[0]} inputs but {Y.shape[0]} targets")
    if X.shape[0] < 1:
        raise TooFewSamples("need at least one sample")
    return X, Y


@dataclass(frozen=True)
class KrrModel:
    X: np.ndarray
    alpha: np.ndarray
    kernel: KernelSpec
    lam: float

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.X.shape[1]:
            raise DimMismatch(f"model has d={self.X.shape[1]}, inputs have {X.shape[1]} columns")
        return kernel_matrix(self.kernel, X, self.X) @ self.alpha


def krr_fit(X, Y, kernel: KernelSpec, lam: float) -> KrrModel:
    """Dual coefficients ``alpha = (K + lam n I)^{-1} Y``."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    X, Y = _xy(X, Y)
    n = X.shape[0]
    A = kernel_matrix(kernel, X, X)
    A[np.diag_indices(n)] += lam * n
    return KrrModel(X.copy(), spd_solve(A, Y), kernel, float(lam))


@dataclass(frozen=True)
class RfRidgeModel:
    fm: FeatureMap
    coef: np.ndarray
    lam: float

    def predict(self, X) -> np.ndarray:
        return apply(self.fm, np.atleast_2d(X)) @ self.coef


def rf_ridge_fit(X, Y, fm: FeatureMap, lam: float) -> RfRidgeModel:
    """Coefficients solving ``(Psi^T Psi + lam n I) c = Psi^T Y``."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    X, Y = _xy(X, Y)
    n = X.shape[0]
    Psi = apply(fm, X)
    A = Psi.T @ Psi
    A[np.diag_indices_from(A)] += lam * n
    b = Psi.T @ Y
    # a rank-deficient Psi still has consistent normal equations; only the solve itself is checked
    return RfRidgeModel(fm, spd_solve(A, b, check_tol=None if lam == 0 else RESIDUAL_TOL), float(lam))


def fit_model(kind: str, X, Y, lam: float, kernel: KernelSpec | None = None, fm: FeatureMap | None = None):
    if kind == "krr":
        return krr_fit(X, Y, kernel, lam)
    if kind == "rf":
        return rf_ridge_fit(X, Y, fm, lam)
    raise ValueError(f"unknown model kind {kind!r}")


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k)


def cv_select_lambda(X, Y, model_kind: str, lam_grid, k: int = 5, seed: int = 0,
                     kernel: KernelSpec | None = None, fm: FeatureMap | None = None,
                     return_scores: bool = False):
    """Pick the ridge parameter with the smallest mean held-out MSE over ``k`` folds.

    Ties go to the larger value.  A candidate whose solve is singular on some
    fold scores ``inf``.
    """
    X, Y = _xy(X, Y)
    grid = [float(v) for v in lam_grid]
    if not grid:
        raise ValueError("lam_grid is empty")
    if k < 2:
        raise ValueError("k must be >= 2")
    n = X.shape[0]
    if n < k:
        raise TooFewSamples(f"{n} samples cannot be split into {k} folds")
    folds = kfold_indices(n, k, seed)
    scores = {}
    for lam in grid:
        errs = []
        for i, test in enumerate(folds):
            train = np.concatenate([f for j, f in enumerate(folds) if j != i])
            try:
                model = fit_model(model_kind, X[train], Y[train], lam, kernel, fm)
            except SingularSystem:
                errs = [np.inf]
                break
            errs.append(np.mean((Y[test] - model.predict(X[test])) ** 2))
        scores[lam] = float(np.mean(errs))
    best = min(sorted(set(grid), reverse=True), key=lambda lam: scores[lam])
    return (best, scores) if return_scores else best
