import math

import numpy as np
import pytest

from mlkm.baselines import cv_select_lambda, kfold_indices, krr_fit, rf_ridge_fit, spd_solve
from mlkm.errors import SingularSystem, TooFewSamples
from mlkm.kernels import FeatureMap, gaussian, kernel_matrix, laplacian, spectral_sample
from oracles import krr_dense_oracle


def data(n, d=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, d))
    return X, np.sin(4 * X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.standard_normal(n)


def test_krr_single_point():
    m = krr_fit(np.array([[0.3, 0.1]]), np.array([4.0]), gaussian(), lam=1.0)
    assert m.alpha[0] == pytest.approx(2.0, abs=1e-15)


@pytest.mark.parametrize("n", [3, 20, 50])
def test_krr_matches_dense_inverse(n):
    X, Y = data(n, seed=n)
    for kernel, lam in [(gaussian(0.5), 1e-3), (laplacian(1.0), 1e-2)]:
        m = krr_fit(X, Y, kernel, lam)
        Xq = np.random.default_rng(1).uniform(size=(10, 2))
        ref = krr_dense_oracle(kernel_matrix(kernel, X, X), Y, lam, kernel_matrix(kernel, Xq, X))
        assert np.max(np.abs(m.predict(Xq) - ref)) <= 1e-10
        alpha = np.linalg.inv(kernel_matrix(kernel, X, X) + lam * n * np.eye(n)) @ Y
        assert np.max(np.abs(m.alpha - alpha)) <= 1e-10 * max(1.0, np.max(np.abs(alpha)))


def test_krr_huge_lambda_shrinks_to_zero():
    X, Y = data(30)
    grid = np.random.default_rng(0).uniform(size=(50, 2))
    assert np.max(np.abs(krr_fit(X, Y, gaussian(), 1e12).predict(grid))) < 1e-9


def test_krr_interpolates_at_zero_lambda():
    X, Y = data(15)
    m = krr_fit(X, Y, laplacian(0.5), 0.0)
    assert np.linalg.norm(m.predict(X) - Y) <= 1e-6 * np.linalg.norm(Y)


def test_krr_singular_kernel():
    X = np.array([[0.1, 0.2], [0.1, 0.2], [0.5, 0.5]])
    with pytest.raises(SingularSystem):
        krr_fit(X, np.array([1.0, 2.0, 3.0]), gaussian(), 0.0)


def test_spd_solve_rejects_indefinite():
    with pytest.raises(SingularSystem):
        spd_solve(np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones(2))


def test_krr_permutation_invariant():
    X, Y = data(25)
    perm = np.random.default_rng(3).permutation(25)
    Xq = np.random.default_rng(4).uniform(size=(7, 2))
    a = krr_fit(X, Y, gaussian(), 1e-3).predict(Xq)
    b = krr_fit(X[perm], Y[perm], gaussian(), 1e-3).predict(Xq)
    assert np.max(np.abs(a - b)) <= 1e-12


def test_rf_constant_feature():
    fm = FeatureMap(gaussian(), np.zeros((1, 2)), np.zeros(1))
    X, Y = data(12)
    m = rf_ridge_fit(X, Y, fm, 0.0)
    assert m.coef[0] == pytest.approx(Y.mean() / math.sqrt(2), rel=1e-13)
    assert np.allclose(m.predict(X), Y.mean(), rtol=0, atol=1e-13)


def test_rf_huge_lambda():
    X, Y = data(40)
    m = rf_ridge_fit(X, Y, spectral_sample(gaussian(), 2, 30, 0), 1e12)
    assert np.max(np.abs(m.predict(X))) < 1e-9


def test_rf_close_to_krr():
    X, Y = data(100, seed=2)
    fm = spectral_sample(gaussian(1.0), 2, 4000, seed=0)
    lam = 1e-3
    grid = np.stack(np.meshgrid(np.linspace(0, 1, 15), np.linspace(0, 1, 15)), -1).reshape(-1, 2)
    rmse = np.sqrt(np.mean((rf_ridge_fit(X, Y, fm, lam).predict(grid) - krr_fit(X, Y, gaussian(1.0), lam).predict(grid)) ** 2))
    assert rmse <= 0.05 * np.std(Y)


def test_rf_converges_to_krr_in_width():
    X, Y = data(60, seed=5)
    Xq = np.random.default_rng(6).uniform(size=(20, 2))
    krr = krr_fit(X, Y, gaussian(), 1e-2).predict(Xq)
    errs = []
    for D in (50, 500, 5000):
        errs.append(np.mean([np.mean(np.abs(rf_ridge_fit(X, Y, spectral_sample(gaussian(), 2, D, s), 1e-2).predict(Xq)
                                            - krr)) for s in range(5)]))
    assert errs[0] > errs[1] > errs[2]


def test_rf_normal_equations():
    X, Y = data(50)
    fm = spectral_sample(gaussian(), 2, 20, 3)
    m = rf_ridge_fit(X, Y, fm, 0.01)
    P = fm(X)
    assert np.allclose((P.T @ P + 0.01 * 50 * np.eye(20)) @ m.coef, P.T @ Y, atol=1e-10)


def test_kfold_partition():
    folds = kfold_indices(23, 5, seed=1)
    assert sorted(np.concatenate(folds).tolist()) == list(range(23))
    assert max(map(len, folds)) - min(map(len, folds)) <= 1


def test_cv_singleton_grid():
    X, Y = data(30)
    assert cv_select_lambda(X, Y, "krr", [0.3], kernel=gaussian()) == 0.3


def test_cv_prefers_shrinkage_on_noise():
    rng = np.random.default_rng(0)
    X, Y = rng.uniform(size=(60, 2)), rng.standard_normal(60)
    assert cv_select_lambda(X, Y, "krr", [0.0, 1e6], kernel=gaussian(0.2)) == 1e6
    fm = spectral_sample(gaussian(0.2), 2, 100, 0)
    assert cv_select_lambda(X, Y, "rf", [0.0, 1e6], fm=fm) == 1e6


def test_cv_deterministic_and_tie_break():
    X, Y = data(40)
    g = [1e-6, 1e-3, 1e-1]
    assert cv_select_lambda(X, Y, "krr", g, seed=3, kernel=gaussian()) == cv_select_lambda(X, Y, "krr", g, seed=3,
                                                                                           kernel=gaussian())
    # constant-zero target: every lambda scores exactly 0, so the largest wins
    assert cv_select_lambda(X, np.zeros(40), "krr", g, kernel=gaussian()) == 1e-1


def test_cv_too_few_samples():
    X, Y = data(3)
    with pytest.raises(TooFewSamples):
        cv_select_lambda(X, Y, "krr", [1.0], k=5, kernel=gaussian())
