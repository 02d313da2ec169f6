"""End-to-end acceptance suite.

Each test checks one criterion at its stated tolerance and records a single
PASS/FAIL line, echoed in the pytest terminal summary.  Run with ``-s`` to see
the lines as they are produced.
"""

import time

import numpy as np
import pytest

from mlkm.baselines import krr_fit, rf_ridge_fit
from mlkm.bench import EXAMPLE_TRAIN, ExperimentSpec, PipelineScenario, run_experiment, scaling_study
from mlkm.conformal import ResidualOracle, coverage_study
from mlkm.errors import TooFewSamples
from mlkm.kernels import gaussian, kernel_matrix, laplacian, mc_kernel_error, spectral_sample
from mlkm.network import Architecture, Network, Weights, backward, forward, init_weights
from mlkm.simdata import Scenario
from mlkm.training import TrainConfig, adds_fit, make_fold_plan
from oracles import central_difference, gradient_close, krr_dense_oracle

pytestmark = pytest.mark.acceptance


def test_criterion_1_feature_fidelity(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    pairs = [(rng.uniform(size=2), rng.uniform(size=2)) for _ in range(100)]
    fm = spectral_sample(gaussian(1.0), 2, 2000, seed=11)
    err = mc_kernel_error(gaussian(1.0), fm, pairs)
    elapsed = time.perf_counter() - t0
    report_criterion(1, "random-feature kernel fidelity", err <= 0.10 and elapsed < 2.0,
                     f"max error {err:.4f} <= 0.10, {elapsed:.2f}s < 2s")


def _gradient_case(seed):
    rng = np.random.default_rng(10_000 + seed)
    d = int(rng.integers(1, 6))
    D1 = int(rng.integers(2, 17))
    two_layer = D1 > 2 and rng.random() < 0.75
    if two_layer:
        spec = f"{d}-{D1}-{int(rng.integers(1, min(D1, 9)))}-1"
    else:
        spec = f"{d}-{D1}-1"
    L = spec.count("-") - 1
    residual = two_layer and rng.random() < 0.5
    kernels = [gaussian(0.7), laplacian(1.3)][:L] if rng.random() < 0.3 else None
    arch = Architecture.from_string(spec, scales=[0.7, 1.3][:L], residual=residual, kernels=kernels)
    net = Network.sample(arch, seed)
    W = init_weights(arch, rng)
    n = int(rng.integers(1, 11))
    return net, W, rng.uniform(size=(n, d)), rng.normal(size=n), float(rng.choice([0.0, 0.05]))


def test_criterion_2_gradient_exactness(report_criterion):
    t0 = time.perf_counter()
    failures = []
    for seed in range(20):
        net, W, X, Y, ridge = _gradient_case(seed)

        def loss(theta):
            Wt = Weights.from_flat(net.arch, theta)
            r = Y - forward(net, Wt, X)
            return float(np.mean(r * r) + ridge * Wt.sq_norm())

        analytic = backward(net, W, X, Y, ridge).flatten()
        if not gradient_close(analytic, central_difference(loss, W.flatten()), rel=1e-5, abs_floor=1e-8):
            failures.append(seed)
    elapsed = time.perf_counter() - t0
    report_criterion(2, "analytic gradients vs central differences", not failures and elapsed < 30.0,
                     f"20 cases, failing seeds {failures}, {elapsed:.1f}s < 30s")


def test_criterion_3_baseline_oracles(report_criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for n in (5, 20, 50):
        rng = np.random.default_rng(n)
        X, Xq = rng.uniform(size=(n, 3)), rng.uniform(size=(25, 3))
        Y = np.cos(3 * X[:, 0]) + X[:, 2] + 0.1 * rng.standard_normal(n)
        for kernel, lam in [(gaussian(0.6), 1e-3), (laplacian(1.0), 1e-2)]:
            ref = krr_dense_oracle(kernel_matrix(kernel, X, X), Y, lam, kernel_matrix(kernel, Xq, X))
            worst = max(worst, float(np.max(np.abs(krr_fit(X, Y, kernel, lam).predict(Xq) - ref))))
    rng = np.random.default_rng(100)
    X = rng.uniform(size=(100, 2))
    Y = np.sin(4 * X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.standard_normal(100)
    grid = np.stack(np.meshgrid(np.linspace(0, 1, 20), np.linspace(0, 1, 20)), -1).reshape(-1, 2)
    lam = 1e-3
    krr = krr_fit(X, Y, gaussian(1.0), lam).predict(grid)
    rf = rf_ridge_fit(X, Y, spectral_sample(gaussian(1.0), 2, 4000, seed=5), lam).predict(grid)
    rmse = float(np.sqrt(np.mean((rf - krr) ** 2)))
    bound = 0.05 * float(np.std(Y))
    elapsed = time.perf_counter() - t0
    report_criterion(3, "KRR dense oracle and RF-to-KRR agreement",
                     worst <= 1e-10 and rmse <= bound and elapsed < 60.0,
                     f"KRR max diff {worst:.1e} <= 1e-10, RF RMSE {rmse:.4f} <= {bound:.4f}, {elapsed:.1f}s")


def test_criterion_4_example1_comparison(report_criterion):
    t0 = time.perf_counter()
    rows = []
    for seed in range(5):
        spec = ExperimentSpec(roster=("RF", "MLKM"), layers="4-32-8-1", scales=(0.4, 1.0),
                              scenario=Scenario("additive1", 4, 4000, seed=seed), n_test=4000,
                              train=EXAMPLE_TRAIN, seed=seed)
        report = run_experiment(spec)
        rf, mlkm = report["RF"], report["MLKM"]
        assert not (rf.failed or mlkm.failed), (rf.error, mlkm.error)
        rows.append((seed, mlkm.test_mse, rf.test_mse))
        print(f"  seed {seed}: MLKM {mlkm.test_mse:.4f}  RF {rf.test_mse:.4f}  epochs {mlkm.epochs}")
    ordered = sum(m <= r for _, m, r in rows)
    level_ok = all(m <= 1.45 for _, m, _ in rows)
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"s{s}: {m:.3f}/{r:.3f}" for s, m, r in rows)
    report_criterion(4, "additive benchmark MLKM vs RF test MSE", level_ok and ordered >= 3,
                     f"MLKM/RF per seed {detail}; MLKM <= 1.45 on all, MLKM <= RF on {ordered}/5; "
                     f"{elapsed / 60:.1f} min")


def test_criterion_5_coverage_sandwich(report_criterion):
    t0 = time.perf_counter()
    oracle = coverage_study(ResidualOracle(19, "normal"), 0.05, 10_000, seed=0)
    lo, hi = oracle.band
    oracle_ok = lo - 3 * oracle.se <= oracle.coverage <= hi + 3 * oracle.se
    pipeline = PipelineScenario(Scenario("additive1", 4, 1), n_fit=500, m=500, layers="4-32-8-1", scales=(0.4, 1.0),
                                train=TrainConfig(learning_rate=0.1, lr_decay=1e-3, patience=100, max_epochs=1000),
                                test_points=1000)
    res = coverage_study(pipeline, 0.05, 200, seed=0)
    pipe_ok = 0.92 <= res.coverage <= 0.975
    elapsed = time.perf_counter() - t0
    modes = {m: pipeline.modes.count(m) for m in sorted(set(pipeline.modes))}
    report_criterion(5, "conformal coverage sandwich", oracle_ok and pipe_ok and elapsed < 600.0,
                     f"oracle {oracle.coverage:.4f} within [{lo:.3f}, {hi:.3f}] +/- 3 SE ({oracle.se:.4f}); "
                     f"pipeline {res.coverage:.4f} in [0.92, 0.975], modes {modes}; {elapsed:.0f}s < 600s")


def test_criterion_6_complexity(report_criterion):
    t0 = time.perf_counter()
    mlkm = scaling_study("MLKM", [1000, 2000, 4000, 8000], layers="4-32-8-1")
    krr = scaling_study("KRR", [500, 1000, 2000, 4000])
    monotone = all(b >= a for a, b in zip(mlkm.seconds, mlkm.seconds[1:]))
    arch = Architecture.from_string("128-256-16-1")
    widths = [256, 16, 1]
    layer_sum = sum(a * b for a, b in zip(widths, widths[1:]))
    storage_ok = arch.num_params == layer_sum == 4112 and arch.storage_count == 74032
    elapsed = time.perf_counter() - t0
    ok = 0.8 <= mlkm.slope <= 1.3 and monotone and 2.2 <= krr.slope <= 3.3 and storage_ok and elapsed < 600.0
    report_criterion(6, "complexity slopes and storage accounting", ok,
                     f"MLKM epoch slope {mlkm.slope:.3f} in [0.8, 1.3], KRR fit slope {krr.slope:.3f} in [2.2, 3.3], "
                     f"params {arch.num_params} = {layer_sum}, storage {arch.storage_count} = 74032; {elapsed:.0f}s")


def test_criterion_7_structural_invariants(report_criterion):
    rng = np.random.default_rng(77)
    latin_ok = True
    for _ in range(300):
        n, L = int(rng.integers(1, 500)), int(rng.integers(1, 16))
        if n < L:
            try:
                make_fold_plan(n, L, 0)
                latin_ok = False
            except TooFewSamples:
                pass
            continue
        plan = make_fold_plan(n, L, int(rng.integers(2**31)))
        cover = np.array_equal(np.sort(np.concatenate(plan.folds)), np.arange(n))
        sizes = [len(f) for f in plan.folds]
        rows = all(sorted(r) == list(range(L)) for r in plan.rotations)
        cols = all(sorted(plan.rotations[j][l] for j in range(L)) == list(range(L)) for l in range(L))
        latin_ok &= cover and max(sizes) - min(sizes) <= 1 and rows and cols

    X = rng.uniform(size=(90, 3))
    Y = np.sin(4 * X[:, 0]) + X[:, 1] + 0.1 * rng.standard_normal(90)
    arch = Architecture.from_string("3-12-4-1", scales=[0.5, 1.0])
    net = Network.sample(arch, 1)
    cfg = TrainConfig(learning_rate=0.1, max_epochs=40, seed=4)
    plan = make_fold_plan(90, arch.L, 4)
    a, b = adds_fit(X, net, plan, cfg, Y=Y), adds_fit(X, net, plan, cfg, Y=Y)
    Xq = rng.uniform(size=(50, 3))
    mean_err = float(np.max(np.abs(a.predict(Xq) - sum(forward(net, W, Xq) for W in a.weights) / a.L)))
    bitwise = all(wa.flatten().tobytes() == wb.flatten().tobytes() for wa, wb in zip(a.weights, b.weights))
    report_criterion(7, "fold plan, cross-fit averaging, determinism",
                     latin_ok and mean_err <= 1e-15 and bitwise,
                     f"Latin square over 300 random (n, L): {latin_ok}; mean diff {mean_err:.1e} <= 1e-15; "
                     f"bit-identical reruns: {bitwise}")
