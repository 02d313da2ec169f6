"""Command-line entry point.

Usage::

    mlkm <command> [--config run.json] [--seed N] [--threads N] [--out DIR] [--set key=value ...]

Commands are ``features``, ``simulate``, ``fit``, ``predict``, ``conformal``,
``bench`` and ``widths``.  The config file is JSON with an optional global
``seed``/``threads``/``out`` and one section named after the command.
``--set section.key=value`` overrides a single field (``value`` is parsed as
JSON when possible).  Every run writes ``config.resolved.json`` to the output
directory.

Exit statuses
-------------
0  success
1  unexpected internal error
2  configuration error (unknown key, bad value, missing field)
3  data error (unreadable or malformed CSV, incompatible scenario)
4  numerical failure (singular system, divergence, unstable timing)
5  artifact not found (model file missing)

Failures print one JSON line ``{"error": ..., "kind": ..., "message": ...}``
to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import bench, conformal
from .errors import (ConfigError, DegenerateFit, DivergenceDetected, IncompatibleScenario, InvalidRate,
                     NonFiniteInput, ParseError, SingularSystem, TimingUnstable)
from .kernels import KernelSpec, spectral_sample
from .network import Architecture, Network, Weights, forward
from .simdata import Dataset, Scenario, apply_bounds, generate, load_csv
from .training import CrossFitModel, TrainConfig, adds_fit, make_fold_plan, rate_exponent, recommend_widths, sgd_fit

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_NOT_FOUND = 0, 1, 2, 3, 4, 5
THREADS_ENV = "MLKM_THREADS"
RESOLVED_NAME = "config.resolved.json"


class ArtifactNotFound(Exception):
    pass


# -- configuration -----------------------------------------------------------------------

DATA_DEFAULTS = {"scenario": None, "csv": None, "target": None, "n_test": 1000, "test_fraction": 0.2, "n_cal": 0}

SECTIONS = {
    "features": {"kernel": {"family": "gaussian", "scale": 1.0}, "input_dim": None, "num_features": None},
    "simulate": {"scenario": None, "n_test": 0},
    "fit": {"data": None, "layers": "4-32-8-1", "scales": None, "kernels": None, "model": "mlkm",
            "train": {}},
    "predict": {"model": None, "input": None},
    "conformal": {"model": None, "alpha": 0.05, "mode": "auto"},
    "bench": {"kind": "compare", "experiment": {}, "scaling": {}, "coverage": {}},
    "widths": {"n": None, "layers": None, "c": 1.0},
}
GLOBAL_KEYS = {"seed": 0, "threads": None, "out": "."}


def _check_keys(d: dict, allowed, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(command: str, raw: dict, args) -> dict:
    """Merge defaults, file contents and command-line overrides; unknown keys are rejected."""
    _check_keys(raw, set(GLOBAL_KEYS) | set(SECTIONS), "config")
    cfg = {k: raw.get(k, v) for k, v in GLOBAL_KEYS.items()}
    section = raw.get(command, {})
    _check_keys(section, SECTIONS[command], command)
    cfg[command] = {**SECTIONS[command], **section}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        path = key.split(".")
        if len(path) > 1 and path[0] != command:
            raise ConfigError(f"--set {key}: section {path[0]!r} does not apply to {command}")
        target = cfg
        for p in path[:-1]:
            if not isinstance(target.get(p), dict):
                if p in target and target[p] is not None:
                    raise ConfigError(f"--set {key}: {p} is not a section")
                target[p] = {}
            target = target[p]
        if target is cfg[command] and path[-1] not in SECTIONS[command]:
            raise ConfigError(f"unknown key {path[-1]!r} in {command}")
        if target is cfg and path[-1] not in cfg:
            raise ConfigError(f"unknown key {path[-1]!r} in config")
        target[path[-1]] = _parse_value(value)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    if args.threads is not None:
        cfg["threads"] = args.threads
    elif cfg["threads"] is None and os.environ.get(THREADS_ENV):
        cfg["threads"] = os.environ[THREADS_ENV]
    if cfg["threads"] is not None:
        try:
            cfg["threads"] = int(cfg["threads"])
        except (TypeError, ValueError):
            raise ConfigError(f"threads must be an integer, got {cfg['threads']!r}") from None
        if cfg["threads"] < 1:
            raise ConfigError("threads must be >= 1")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    return cfg


def _require(section: dict, key: str, where: str):
    if section.get(key) is None:
        raise ConfigError(f"missing required field {where}.{key}")
    return section[key]


def _scenario(d: dict, seed: int, where: str) -> Scenario:
    d = dict(d)
    _check_keys(d, Scenario.__dataclass_fields__, where)
    d.setdefault("seed", seed)
    try:
        return Scenario(**d)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _train_config(d: dict, seed: int) -> TrainConfig:
    base = bench.EXAMPLE_TRAIN.to_dict()
    _check_keys(d, base, "fit.train")
    base["seed"] = seed
    base.update(d)
    try:
        return TrainConfig(**base)
    except ValueError as exc:
        raise ConfigError(f"fit.train: {exc}") from None


def _kernels(cfg: dict, L: int):
    if cfg.get("kernels") is None:
        return None
    ks = cfg["kernels"]
    if len(ks) != L:
        raise ConfigError(f"fit.kernels lists {len(ks)} kernels for {L} layers")
    try:
        return [KernelSpec.from_dict(k) for k in ks]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"fit.kernels: {exc}") from None


# -- data ------------------------------------------------------------------------------

def resolve_data(d: dict, seed: int) -> tuple[Dataset, Dataset | None, Dataset | None]:
    """``(fit, calibration, test)`` splits described by a data section.

    Scenarios draw the test set from the independent test stream; a CSV is
    split by a seeded permutation.  ``n_cal`` samples of the training part are
    held out for calibration.
    """
    if d is None:
        raise ConfigError("missing required field fit.data")
    _check_keys(d, DATA_DEFAULTS, "fit.data")
    d = {**DATA_DEFAULTS, **d}
    if (d["scenario"] is None) == (d["csv"] is None):
        raise ConfigError("fit.data needs exactly one of scenario and csv")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    if d["scenario"] is not None:
        sc = _scenario(d["scenario"], seed, "fit.data.scenario")
        train = generate(sc)
        test = generate(sc, d["n_test"], "test") if d["n_test"] else None
    else:
        if d["target"] is None:
            raise ConfigError("missing required field fit.data.target")
        if not Path(d["csv"]).is_file():
            raise ConfigError(f"fit.data.csv: no such file {d['csv']}")
        data = load_csv(d["csv"], d["target"])
        perm = rng.permutation(data.n)
        n_test = int(round(d["test_fraction"] * data.n))
        train, test = data.subset(np.sort(perm[n_test:])), (data.subset(np.sort(perm[:n_test])) if n_test else None)
    n_cal = int(d["n_cal"])
    if n_cal:
        if not 0 < n_cal < train.n:
            raise ConfigError(f"fit.data.n_cal={n_cal} must lie in (0, {train.n})")
        perm = rng.permutation(train.n)
        return train.subset(np.sort(perm[n_cal:])), train.subset(np.sort(perm[:n_cal])), test
    return train, None, test


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_dataset(path: Path, data: Dataset):
    header = [f"x{j + 1}" for j in range(data.d)] + ["y"]
    _write_csv(path, header, (list(x) + [y] for x, y in zip(data.X, data.Y)))


def _dump(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=bench._json_default) + "\n")


# -- model artifacts -------------------------------------------------------------------

class SavedModel:
    """A trained model plus the data section it was fitted on."""

    def __init__(self, kind: str, model, data: dict, seed: int, provenance: dict):
        self.kind, self.model, self.data, self.seed, self.provenance = kind, model, data, seed, provenance

    @property
    def net(self) -> Network:
        return self.model.net if self.kind != "sgd" else self.model[0]

    def predictor(self):
        if self.kind == "sgd":
            return conformal.NetworkPredictor(*self.model)
        return conformal.CrossFitPredictor(self.model)

    def to_dict(self) -> dict:
        if self.kind == "sgd":
            body = {"net": self.model[0].to_dict(), "weights": self.model[1].to_dict()}
        else:
            body = self.model.to_dict()
        return {"format": "mlkm-model/1", "kind": self.kind, "model": body, "data": self.data, "seed": self.seed,
                "provenance": self.provenance}

    @classmethod
    def load(cls, path) -> "SavedModel":
        path = Path(path)
        if not path.is_file():
            raise ArtifactNotFound(f"model file {path} not found")
        d = json.loads(path.read_text())
        if d.get("format") != "mlkm-model/1":
            raise ConfigError(f"{path} is not a model file")
        if d["kind"] == "sgd":
            model = (Network.from_dict(d["model"]["net"]), Weights.from_dict(d["model"]["weights"]))
        else:
            model = CrossFitModel.from_dict(d["model"])
        return cls(d["kind"], model, d["data"], d["seed"], d.get("provenance", {}))


def _mse(pred, y):
    return float(np.mean((np.asarray(y) - pred) ** 2))


# -- commands ----------------------------------------------------------------------------

def cmd_features(cfg, out: Path) -> dict:
    sec = cfg["features"]
    try:
        kernel = KernelSpec.from_dict(sec["kernel"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"features.kernel: {exc}") from None
    fm = spectral_sample(kernel, int(_require(sec, "input_dim", "features")),
                         int(_require(sec, "num_features", "features")), cfg["seed"])
    (out / "feature_map.json").write_text(fm.to_json() + "\n")
    return {"num_features": fm.num_features, "input_dim": fm.input_dim, "kernel": kernel.to_dict()}


def cmd_simulate(cfg, out: Path) -> dict:
    sec = cfg["simulate"]
    sc = _scenario(_require(sec, "scenario", "simulate"), cfg["seed"], "simulate.scenario")
    train = generate(sc)
    _write_dataset(out / "train.csv", train)
    res = {"train": train.n}
    if sec["n_test"]:
        test = generate(sc, int(sec["n_test"]), "test")
        _write_dataset(out / "test.csv", test)
        res["test"] = test.n
    return res


def cmd_fit(cfg, out: Path) -> dict:
    sec = cfg["fit"]
    seed = cfg["seed"]
    fit, _, test = resolve_data(sec["data"], seed)
    kind = sec["model"]
    if kind not in ("mlkm", "rkm", "sgd"):
        raise ConfigError(f"fit.model must be mlkm, rkm or sgd, got {kind!r}")
    try:
        arch = Architecture.from_string(sec["layers"], scales=sec["scales"], residual=kind == "rkm",
                                        kernels=_kernels(sec, len(sec["layers"].split("-")) - 2))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"fit.layers/scales: {exc}") from None
    if arch.input_dim != fit.d:
        raise ConfigError(f"fit.layers input dimension {arch.input_dim} but data has {fit.d} features")
    train_cfg = _train_config(sec["train"], seed)
    net = Network.sample(arch, seed)
    with open(out / "train_log.jsonl", "w") as log:
        if kind == "sgd":
            res = sgd_fit(fit, net, train_cfg)
            for e, loss in enumerate(res.losses):
                log.write(json.dumps({"epoch": e, "loss": loss}) + "\n")
            model, epochs, converged = (net, res.weights), res.epochs, res.converged
        else:
            model = adds_fit(fit, net, make_fold_plan(fit.n, arch.L, seed), train_cfg, log_stream=log)
            epochs, converged = model.epochs, model.converged
    prov = {k: v for k, v in fit.provenance.items() if k in ("columns", "bounds", "target")}
    saved = SavedModel(kind, model, sec["data"], seed, prov)
    _dump(out / "model.json", saved.to_dict())
    pred = saved.predictor()
    metrics = {"model": kind, "layers": arch.layer_string, "epochs": epochs, "converged": converged,
               "n_fit": fit.n, "num_params": arch.num_params, "storage": arch.storage_count,
               "train_mse": _mse(pred.predict(fit.X), fit.Y)}
    if test is not None:
        metrics["test_mse"] = _mse(pred.predict(test.X), test.Y)
    _dump(out / "metrics.json", metrics)
    return metrics


def _read_inputs(path, saved: SavedModel) -> np.ndarray:
    from .simdata import read_csv
    if not Path(path).is_file():
        raise ArtifactNotFound(f"input file {path} not found")
    header, data = read_csv(path)
    cols = saved.provenance.get("columns") or [f"x{j + 1}" for j in range(saved.net.arch.input_dim)]
    missing = [c for c in cols if c not in header]
    if missing:
        raise ParseError(f"input file lacks column(s) {missing}", 1, missing[0])
    X = data[:, [header.index(c) for c in cols]]
    if "bounds" in saved.provenance:
        X = apply_bounds(X, cols, saved.provenance["bounds"])
    return X


def cmd_predict(cfg, out: Path) -> dict:
    sec = cfg["predict"]
    saved = SavedModel.load(_require(sec, "model", "predict"))
    X = _read_inputs(_require(sec, "input", "predict"), saved)
    pred = np.atleast_1d(saved.predictor().predict(X))
    _write_csv(out / "predictions.csv", ["id", "prediction"], enumerate(pred))
    return {"predictions": int(pred.size)}


def cmd_conformal(cfg, out: Path) -> dict:
    sec = cfg["conformal"]
    alpha = sec["alpha"]
    if not isinstance(alpha, (int, float)) or not 0 < alpha < 1:
        raise ConfigError(f"conformal.alpha must lie in (0, 1), got {alpha!r}")
    if sec["mode"] not in ("auto", "weighted", "unweighted"):
        raise ConfigError(f"conformal.mode must be auto, weighted or unweighted, got {sec['mode']!r}")
    saved = SavedModel.load(_require(sec, "model", "conformal"))
    fit, cal, test = resolve_data(saved.data, saved.seed)
    if cal is None:
        raise ConfigError("the model was fitted without a calibration split; set fit.data.n_cal")
    if test is None:
        raise ConfigError("the model's data section has no test set")
    pred = saved.predictor()
    var = conformal.fit_variance(pred, fit.X, fit.Y, sec["mode"])
    calib = conformal.calibrate(pred, var, cal.X, cal.Y, alpha)
    lo, hi = conformal.predict_interval(pred, var, calib, test.X)
    center = np.atleast_1d(pred.predict(test.X))
    sig = var.sigma_y(pred, test.X)
    _write_csv(out / "intervals.csv", ["id", "prediction", "lower", "upper", "sigma_y"],
               zip(range(len(center)), center, lo, hi, sig))
    summary = {**calib.summary(), "n_fit": fit.n, "num_params": var.num_params,
               "coverage": float(np.mean(conformal.contains(lo, hi, test.Y))),
               "mean_length": float(np.mean(hi - lo))}
    _dump(out / "summary.json", summary)
    return summary


def cmd_bench(cfg, out: Path) -> dict:
    sec = cfg["bench"]
    seed = cfg["seed"]
    kind = sec["kind"]
    if kind == "compare":
        exp = dict(sec["experiment"])
        _check_keys(exp, bench.ExperimentSpec.__dataclass_fields__, "bench.experiment")
        if exp.get("scenario") is not None:
            exp["scenario"] = _scenario(exp["scenario"], seed, "bench.experiment.scenario")
        if "train" in exp:
            exp["train"] = _train_config(exp["train"], seed)
        exp.setdefault("seed", seed)
        try:
            spec = bench.ExperimentSpec(**exp)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bench.experiment: {exc}") from None
        report = bench.run_experiment(spec)
        (out / "report.json").write_text(report.to_json() + "\n")
        (out / "report.txt").write_text(report.table() + "\n")
        report.write_series(out / "series.csv")
        return {"models": {r.name: (r.error if r.failed else r.test_mse) for r in report.results}}
    if kind == "scaling":
        sc = dict(sec["scaling"])
        try:
            res = bench.scaling_study(sc.pop("model_kind"), sc.pop("n_grid"), seed=seed, **sc)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bench.scaling: {exc}") from None
        _dump(out / "scaling.json", res.to_dict())
        return {"slope": res.slope}
    if kind == "coverage":
        cv = dict(sec["coverage"])
        _check_keys(cv, {"grid", "replications", "n_se"}, "bench.coverage")
        grid = []
        for i, row in enumerate(cv.get("grid", [])):
            row = dict(row)
            alpha = row.pop("alpha", 0.05)
            if "oracle" in row:
                grid.append((conformal.ResidualOracle(row["m"], row.get("oracle", "normal")), alpha))
                continue
            where = f"bench.coverage.grid[{i}]"
            sc = _scenario(_require(row, "scenario", where), seed, where + ".scenario")
            train = _train_config(row.get("train", {}), seed)
            grid.append((bench.PipelineScenario(sc, _require(row, "n_fit", where), _require(row, "m", where),
                                                row.get("layers", "4-32-8-1"), row.get("scales", (0.4, 1.0)),
                                                train, row.get("test_points", 1)), alpha))
        rows = bench.coverage_table(grid, int(cv.get("replications", 100)), seed, cv.get("n_se", 3.0))
        _dump(out / "coverage.json", [r.to_dict() for r in rows])
        (out / "coverage.txt").write_text(bench.format_coverage_table(rows) + "\n")
        return {"rows": len(rows), "all_inside": all(r.inside for r in rows)}
    raise ConfigError(f"bench.kind must be compare, scaling or coverage, got {kind!r}")


def _q(v):
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        return math.inf
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"widths: q must be a number or 'inf', got {v!r}") from None


def cmd_widths(cfg, out: Path) -> dict:
    sec = cfg["widths"]
    layers = [(_q(l["q"]), int(l["d"])) for l in _require(sec, "layers", "widths")]
    if any(q <= 0 for q, _ in layers):
        raise ConfigError("widths: every q must be positive")
    try:
        widths = recommend_widths(int(_require(sec, "n", "widths")), layers, float(sec["c"]))
        delta = rate_exponent(layers)
    except InvalidRate as exc:
        raise ConfigError(f"widths: {exc}") from None
    res = {"widths": widths, "rate_exponent": delta}
    _dump(out / "widths.json", res)
    return res


COMMANDS = {"features": cmd_features, "simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "conformal": cmd_conformal, "bench": cmd_bench, "widths": cmd_widths}


def _classify(exc: BaseException) -> int:
    if isinstance(exc, ArtifactNotFound):
        return EXIT_NOT_FOUND
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (ParseError, IncompatibleScenario, NonFiniteInput, OSError)):
        return EXIT_DATA
    if isinstance(exc, (SingularSystem, DivergenceDetected, TimingUnstable, DegenerateFit, ArithmeticError,
                        np.linalg.LinAlgError)):
        return EXIT_NUMERICAL
    if isinstance(exc, ValueError):
        return EXIT_CONFIG
    return EXIT_INTERNAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlkm", description="Multi-layer kernel machines.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--threads", type=int, help=f"BLAS threads (overrides ${THREADS_ENV})")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
    return p


def _limits(threads):
    if threads is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=threads)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = {}
        if args.config:
            if not Path(args.config).is_file():
                raise ConfigError(f"config file {args.config} not found")
            try:
                raw = json.loads(Path(args.config).read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {args.config}: {exc}") from None
        cfg = resolve_config(args.command, raw, args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        _dump(out / RESOLVED_NAME, {"command": args.command, **cfg})
        with _limits(cfg["threads"]):
            result = COMMANDS[args.command](cfg, out)
        print(json.dumps({"status": "ok", "command": args.command, **result}, default=bench._json_default))
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - every failure becomes one error record
        code = _classify(exc)
        print(json.dumps({"error": code, "kind": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
