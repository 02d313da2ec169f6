"""Experiment harness: model comparisons, conformal coverage tables and scaling fits."""

from __future__ import annotations

import json
import math
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import conformal
from .baselines import cv_select_lambda, krr_fit, rf_ridge_fit
from .errors import MLKMError, TimingUnstable
from .kernels import gaussian, spectral_sample
from .network import Architecture, Network, first_layer_features, init_weights, parse_layers
from .simdata import Dataset, Scenario, generate, load_csv
from .training import CrossFitModel, TrainConfig, adds_epoch, adds_fit, make_fold_plan, sgd_fit

ROSTER = ("KRR", "RF", "MLKM", "RKM", "SGD-MLKM")
DEFAULT_LAMBDAS = tuple(10.0**k for k in range(-10, 1))

# step size and decay that train the 4-32-8-1 example reliably
EXAMPLE_TRAIN = TrainConfig(learning_rate=0.1, lr_decay=1e-3, patience=100, max_epochs=4000)


@dataclass
class ExperimentSpec:
    """One comparison run.

    Either ``scenario`` or ``dataset_path`` (+ ``target_column``) supplies the
    data.  With ``alpha`` set the training sample is split into a fitting part
    of size ``n_fit`` and a calibration part of size ``m`` (default: halves)
    and conformal bands are evaluated on the test set.
    """

    roster: tuple[str, ...] = ("RF", "MLKM")
    layers: str = "4-32-8-1"
    scales: tuple[float, ...] = (0.4, 1.0)
    scenario: Scenario | None = None
    dataset_path: str | None = None
    target_column: str | None = None
    test_fraction: float = 0.3
    n_test: int = 4000
    rf_features: int = 500
    rf_scale: float = 1.0
    krr_scale: float = 1.0
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDAS
    cv_folds: int = 5
    train: TrainConfig = EXAMPLE_TRAIN
    alpha: float | None = None
    n_fit: int | None = None
    m: int | None = None
    seed: int = 0

    def __post_init__(self):
        self.roster = tuple(self.roster)
        if not self.roster:
            raise ValueError("roster is empty")
        bad = [r for r in self.roster if r not in ROSTER]
        if bad:
            raise ValueError(f"unknown models {bad}; choose from {ROSTER}")
        if len(set(self.roster)) != len(self.roster):
            raise ValueError("roster lists a model twice")
        _, widths = parse_layers(self.layers)
        if len(self.scales) != len(widths):
            raise ValueError(f"{len(widths)} layers but {len(self.scales)} scales")
        Architecture.from_string(self.layers, scales=self.scales)
        if (self.scenario is None) == (self.dataset_path is None):
            raise ValueError("give exactly one of scenario and dataset_path")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["train"] = self.train.to_dict()
        return out


@dataclass
class ModelResult:
    name: str
    train_mse: float = math.nan
    test_mse: float = math.nan
    fit_seconds: float = math.nan
    epoch_seconds: float = math.nan
    epochs: int = 0
    storage: int = 0
    num_params: int = 0
    lam: float | None = None
    band_length: float | None = None
    coverage: float | None = None
    mode: str | None = None
    failed: bool = False
    error: str | None = None


@dataclass
class BenchmarkReport:
    spec: dict
    results: list[ModelResult]
    environment: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)

    def __getitem__(self, name) -> ModelResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_json(self) -> str:
        return json.dumps({"spec": self.spec, "results": [asdict(r) for r in self.results],
                           "environment": self.environment}, indent=2, default=_json_default)

    def table(self) -> str:
        """Aligned plain-text table, one column per model."""
        names = [r.name for r in self.results]
        rows = [("Training MSE", [_fmt(r.train_mse, r) for r in self.results]),
                ("Testing MSE", [_fmt(r.test_mse, r) for r in self.results]),
                ("Time", [_fmt_time(r) for r in self.results]),
                ("Storage", [str(r.storage) if not r.failed else "-" for r in self.results])]
        if any(r.coverage is not None for r in self.results):
            rows.append(("Confidence Band", [
                "" if r.coverage is None else f"{r.band_length:.3f} ({100 * r.coverage:.2f}%)"
                for r in self.results]))
        w0 = max(len(r[0]) for r in rows)
        widths = [max(len(n), *(len(r[1][i]) for r in rows)) for i, n in enumerate(names)]
        lines = [" " * w0 + "  " + "  ".join(n.rjust(w) for n, w in zip(names, widths))]
        for label, cells in rows:
            lines.append(label.ljust(w0) + "  " + "  ".join(c.rjust(w) for c, w in zip(cells, widths)))
        return "\n".join(lines)

    def write_series(self, path):
        """``model,epoch,train_loss,test_mse`` rows for MSE-versus-epoch plots."""
        with open(path, "w") as fh:
            fh.write("model,epoch,train_loss,test_mse\n")
            for name, rows in self.series.items():
                for epoch, loss, test in rows:
                    fh.write(f"{name},{epoch},{loss!r},{test!r}\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o)}")


def _fmt(v, r):
    return "failed" if r.failed else f"{v:.3f}"


def _fmt_time(r):
    if r.failed:
        return "-"
    return f"{1e3 * r.epoch_seconds:.2f}ms/ep" if r.epochs else f"{r.fit_seconds:.3f}s"


def environment() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__,
            "machine": platform.machine(), "platform": platform.platform()}


def load_data(spec: ExperimentSpec) -> tuple[Dataset, Dataset]:
    if spec.scenario is not None:
        return generate(spec.scenario), generate(spec.scenario, spec.n_test, "test")
    data = load_csv(spec.dataset_path, spec.target_column)
    perm = np.random.default_rng(spec.seed).permutation(data.n)
    n_test = int(round(spec.test_fraction * data.n))
    return data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))


def conformal_split(n: int, n_fit: int | None, m: int | None, seed: int) -> tuple[np.ndarray, np.ndarray]:
    n_fit = n // 2 if n_fit is None else n_fit
    m = n - n_fit if m is None else m
    if n_fit < 1 or m < 1 or n_fit + m > n:
        raise ValueError(f"cannot split {n} samples into n'={n_fit} and m={m}")
    perm = np.random.default_rng(np.random.SeedSequence([seed, 7])).permutation(n)
    return np.sort(perm[:n_fit]), np.sort(perm[n_fit:n_fit + m])


def _mse(pred, y) -> float:
    return float(np.mean((np.asarray(y) - np.asarray(pred)) ** 2))


def _epoch_time(log) -> float:
    clocks = [rec.wall_clock for rec in log]
    steps = np.diff([0.0] + clocks)
    return float(np.median(steps)) if len(steps) else math.nan


def build_network(spec: ExperimentSpec, residual: bool) -> Network:
    arch = Architecture.from_string(spec.layers, scales=spec.scales, residual=residual)
    return Network.sample(arch, spec.seed)


def _fit_one(name, spec, fit, test, series):
    res = ModelResult(name)
    t0 = time.perf_counter()
    if name == "KRR":
        kern = gaussian(spec.krr_scale)
        lam = cv_select_lambda(fit.X, fit.Y, "krr", spec.lambda_grid, spec.cv_folds, spec.seed, kernel=kern)
        t0 = time.perf_counter()
        model = krr_fit(fit.X, fit.Y, kern, lam)
        res.fit_seconds = time.perf_counter() - t0
        res.lam, res.storage, res.num_params = lam, fit.n**2, fit.n
        return model, res
    if name == "RF":
        fm = spectral_sample(gaussian(spec.rf_scale), fit.d, spec.rf_features, spec.seed)
        lam = cv_select_lambda(fit.X, fit.Y, "rf", spec.lambda_grid, spec.cv_folds, spec.seed, fm=fm)
        t0 = time.perf_counter()
        model = rf_ridge_fit(fit.X, fit.Y, fm, lam)
        res.fit_seconds = time.perf_counter() - t0
        res.lam, res.storage, res.num_params = lam, fit.n * spec.rf_features, spec.rf_features
        return model, res
    net = build_network(spec, residual=(name == "RKM"))
    res.storage, res.num_params = net.arch.storage_count, net.arch.num_params
    rows = series.setdefault(name, [])
    if name == "SGD-MLKM":
        out = sgd_fit(fit, net, replace(spec.train, seed=spec.seed))
        res.fit_seconds = time.perf_counter() - t0
        res.epochs = out.epochs
        res.epoch_seconds = res.fit_seconds / max(out.epochs, 1)
        rows.extend((e, l, math.nan) for e, l in enumerate(out.losses))
        return conformal.NetworkPredictor(net, out.weights), res
    every = max(1, spec.train.max_epochs // 100)
    tests = {}

    def track(epoch, weights):
        if epoch % every == 0:
            tests[epoch] = _mse(np.mean([conformal.NetworkPredictor(net, W).predict(test.X) for W in weights],
                                        axis=0), test.Y)

    plan = make_fold_plan(fit.n, net.arch.L, spec.seed)
    model = adds_fit(fit, net, plan, replace(spec.train, seed=spec.seed), callback=track)
    res.fit_seconds = time.perf_counter() - t0
    res.epochs = model.epochs
    res.epoch_seconds = _epoch_time(model.log)
    rows.extend((r.epoch, r.loss, tests.get(r.epoch, math.nan)) for r in model.log)
    return model, res


def run_experiment(spec: ExperimentSpec) -> BenchmarkReport:
    """Train every roster model on identical splits and evaluate on the test set.

    A model that raises a package error is reported with ``failed=True``;
    the remaining models still run.
    """
    train, test = load_data(spec)
    if spec.alpha is not None:
        fit_idx, cal_idx = conformal_split(train.n, spec.n_fit, spec.m, spec.seed)
        fit, cal = train.subset(fit_idx), train.subset(cal_idx)
    else:
        fit, cal = train, None
    results, series = [], {}
    for name in spec.roster:
        try:
            model, res = _fit_one(name, spec, fit, test, series)
            pred = conformal.as_predictor(model)
            res.train_mse = _mse(pred.predict(fit.X), fit.Y)
            res.test_mse = _mse(pred.predict(test.X), test.Y)
            if cal is not None:
                var = conformal.fit_variance(pred, fit.X, fit.Y)
                calib = conformal.calibrate(pred, var, cal.X, cal.Y, spec.alpha)
                lo, hi = conformal.predict_interval(pred, var, calib, test.X)
                res.band_length = float(np.mean(hi - lo))
                res.coverage = float(np.mean(conformal.contains(lo, hi, test.Y)))
                res.mode = var.mode
        except (MLKMError, np.linalg.LinAlgError, FloatingPointError) as exc:
            res = ModelResult(name, failed=True, error=f"{type(exc).__name__}: {exc}")
        results.append(res)
    return BenchmarkReport(spec.to_dict(), results, environment(), series)


# -- conformal coverage -----------------------------------------------------------------

class PipelineScenario:
    """Full split-conformal pipeline on a simulated scenario.

    Each replication draws ``n_fit + m`` training points with a fresh seed,
    trains a cross-fitted network on the first ``n_fit``, calibrates on the
    remaining ``m`` and scores ``test_points`` fresh draws.
    """

    def __init__(self, scenario: Scenario, n_fit: int, m: int, layers: str, scales, train: TrainConfig = EXAMPLE_TRAIN,
                 test_points: int = 1, residual: bool = False, variance_mode: str = "auto"):
        self.scenario = scenario
        self.n_fit, self.m = n_fit, m
        self.layers, self.scales = layers, tuple(scales)
        self.train = train
        self.test_points = test_points
        self.residual = residual
        self.variance_mode = variance_mode
        self.name = f"{scenario.kind}-d{scenario.d}-{'RKM' if residual else 'MLKM'}-{layers}"
        self.modes: list[str] = []

    def replicate(self, alpha, rng):
        seed = int(rng.integers(2**62))
        sc = replace(self.scenario, n=self.n_fit + self.m, seed=seed)
        data = generate(sc)
        test = generate(sc, self.test_points, "test")
        fit, cal = data.subset(slice(0, self.n_fit)), data.subset(slice(self.n_fit, None))
        arch = Architecture.from_string(self.layers, scales=self.scales, residual=self.residual)
        net = Network.sample(arch, seed)
        model = adds_fit(fit, net, make_fold_plan(fit.n, arch.L, seed), replace(self.train, seed=seed))
        pred = conformal.CrossFitPredictor(model)
        var = conformal.fit_variance(pred, fit.X, fit.Y, self.variance_mode)
        self.modes.append(var.mode)
        calib = conformal.calibrate(pred, var, cal.X, cal.Y, alpha)
        lo, hi = conformal.predict_interval(pred, var, calib, test.X)
        return float(np.mean(conformal.contains(lo, hi, test.Y))), float(np.mean(hi - lo))


@dataclass
class CoverageRow:
    result: conformal.CoverageResult
    inside: bool

    def to_dict(self) -> dict:
        return {**self.result.to_dict(), "inside_band": self.inside}


def coverage_table(grid, replications: int, seed: int, n_se: float = 3.0) -> list[CoverageRow]:
    """Run :func:`conformal.coverage_study` for each ``(scenario, alpha)`` in ``grid``.

    Rows outside the guarantee band widened by ``n_se`` standard errors are
    flagged with ``inside=False``.
    """
    rows = []
    for i, (scen, alpha) in enumerate(grid):
        res = conformal.coverage_study(scen, alpha, replications, seed + i)
        rows.append(CoverageRow(res, res.within_band(n_se)))
    return rows


def format_coverage_table(rows: list[CoverageRow]) -> str:
    head = f"{'scenario':<40} {'alpha':>6} {'m':>5} {'coverage':>9} {'SE':>7} {'band':>15} {'length':>8} ok"
    lines = [head]
    for row in rows:
        r = row.result
        lo, hi = r.band
        lines.append(f"{r.scenario:<40} {r.alpha:>6.3f} {r.m:>5d} {r.coverage:>9.4f} {r.se:>7.4f} "
                     f"[{lo:.3f},{hi:.3f}] {r.mean_length:>8.3f} {'yes' if row.inside else 'NO'}")
    return "\n".join(lines)


# -- scaling ----------------------------------------------------------------------------

def _time_call(fn, min_seconds=0.05) -> float:
    """Mean seconds per call, looping until one measurement lasts ``min_seconds``."""
    k = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(k):
            fn()
        dt = time.perf_counter() - t0
        if dt >= min_seconds:
            return dt / k
        k *= 2


def median_time(fn, repeats: int = 5, max_spread: float = 0.5, retries: int = 3) -> float:
    """Median of ``repeats`` timings after one warm-up call.

    Raises ``TimingUnstable`` when ``(max - min) / median`` exceeds
    ``max_spread`` on every one of ``retries`` attempts.
    """
    fn()
    spread = math.inf
    for _ in range(retries):
        ts = [_time_call(fn) for _ in range(repeats)]
        med = statistics.median(ts)
        spread = (max(ts) - min(ts)) / med
        if spread <= max_spread:
            return med
    raise TimingUnstable(f"repeated timings vary by {100 * spread:.0f}% of the median")


@dataclass
class ScalingResult:
    model_kind: str
    n_grid: list[int]
    seconds: list[float]
    slope: float
    intercept: float

    def to_dict(self) -> dict:
        return asdict(self)


def loglog_fit(n_grid, seconds) -> tuple[float, float]:
    slope, intercept = np.polyfit(np.log(n_grid), np.log(seconds), 1)
    return float(slope), float(intercept)


def _scaling_data(n, d, seed):
    rng = np.random.default_rng(np.random.SeedSequence([seed, n]))
    X = rng.uniform(size=(n, d))
    return X, np.sin(2 * np.pi * X[:, 0]) + rng.standard_normal(n)


def scaling_study(model_kind: str, n_grid, layers: str = "4-32-8-1", seed: int = 0,
                  repeats: int = 5, kernel_scale: float = 1.0, lam: float = 1e-3,
                  rf_features: int = 500) -> ScalingResult:
    """Least-squares slope of log(time) against log(n).

    ``MLKM``/``RKM`` time one ADDS epoch (all rotation/layer steps plus the
    overall-loss pass) with the architecture fixed across ``n``; ``KRR`` and
    ``RF`` time a complete fit at a fixed ridge parameter.
    """
    n_grid = sorted(int(n) for n in n_grid)
    if len(n_grid) < 3 or n_grid[-1] < 4 * n_grid[0]:
        raise ValueError("n_grid needs >= 3 points spanning at least a factor of 4")
    d, _ = parse_layers(layers)
    seconds = []
    for n in n_grid:
        X, Y = _scaling_data(n, d, seed)
        if model_kind == "KRR":
            fn = lambda: krr_fit(X, Y, gaussian(kernel_scale), lam)  # noqa: E731
        elif model_kind == "RF":
            fm = spectral_sample(gaussian(kernel_scale), d, rf_features, seed)
            fn = lambda: rf_ridge_fit(X, Y, fm, lam)  # noqa: E731
        elif model_kind in ("MLKM", "RKM"):
            arch = Architecture.from_string(layers, residual=model_kind == "RKM")
            net = Network.sample(arch, seed)
            plan = make_fold_plan(n, arch.L, seed)
            H1 = first_layer_features(net, X)
            fold_data = [(H1[f], Y[f]) for f in plan.folds]
            rng = np.random.default_rng(seed)
            weights = [init_weights(arch, rng) for _ in range(arch.L)]
            cfg = TrainConfig(learning_rate=1e-4)
            probe = CrossFitModel(net, weights)

            def fn():
                adds_epoch(net, weights, fold_data, cfg, cfg.learning_rate)
                _mse(probe.predict(X), Y)
        else:
            raise ValueError(f"unknown model kind {model_kind!r}")
        seconds.append(median_time(fn, repeats))
    slope, intercept = loglog_fit(n_grid, seconds)
    return ScalingResult(model_kind, n_grid, seconds, slope, intercept)
