import itertools
import json

import numpy as np
import pytest

from mlkm import bench
from mlkm.bench import (ROSTER, ExperimentSpec, PipelineScenario, coverage_table, format_coverage_table, loglog_fit,
                        median_time, run_experiment, scaling_study)
from mlkm.conformal import ResidualOracle
from mlkm.errors import SingularSystem, TimingUnstable
from mlkm.simdata import Scenario
from mlkm.training import TrainConfig

QUICK = TrainConfig(learning_rate=0.1, lr_decay=1e-3, patience=50, max_epochs=1500)


def constant_spec(**kw):
    base = dict(roster=ROSTER, layers="4-16-4-1", scales=(0.4, 1.0), n_test=500, train=QUICK,
                scenario=Scenario("constant", 4, 300, noise=0.0, value=1.5))
    base.update(kw)
    return ExperimentSpec(**base)


def strip_timing(report):
    out = json.loads(report.to_json())
    for r in out["results"]:
        r.pop("fit_seconds"), r.pop("epoch_seconds")
    return out


@pytest.fixture(scope="module")
def constant_report():
    return run_experiment(constant_spec())


def test_constant_target_learned_by_every_model(constant_report):
    assert [r.name for r in constant_report.results] == list(ROSTER)
    for r in constant_report.results:
        assert not r.failed, r.error
        assert 0.0 <= r.test_mse <= 1e-2


def test_report_rendering(constant_report, tmp_path):
    table = constant_report.table()
    lines = table.splitlines()
    assert len(lines) == 5 and len({len(line) for line in lines}) == 1
    assert "Testing MSE" in table and "SGD-MLKM" in lines[0]
    constant_report.write_series(tmp_path / "s.csv")
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "model,epoch,train_loss,test_mse"
    assert {r.split(",")[0] for r in rows[1:]} == {"MLKM", "RKM", "SGD-MLKM"}
    env = json.loads(constant_report.to_json())["environment"]
    assert {"python", "numpy", "platform"} <= set(env)


def test_reports_deterministic():
    spec = constant_spec(roster=("RF", "MLKM"))
    assert strip_timing(run_experiment(spec)) == strip_timing(run_experiment(spec))


def test_conformal_columns():
    spec = ExperimentSpec(roster=("RF", "MLKM"), layers="4-16-4-1", scenario=Scenario("additive1", 4, 400, seed=2),
                          n_test=500, train=QUICK, alpha=0.1)
    report = run_experiment(spec)
    for r in report.results:
        assert 0.0 <= r.coverage <= 1.0 and r.band_length > 0
    assert "Confidence Band" in report.table()


def test_failed_model_is_flagged(monkeypatch):
    def boom(*a, **k):
        raise SingularSystem("forced")

    monkeypatch.setattr(bench, "krr_fit", boom)
    report = run_experiment(constant_spec(roster=("KRR", "RF")))
    assert report["KRR"].failed and "SingularSystem" in report["KRR"].error
    assert not report["RF"].failed
    assert "failed" in report.table()


@pytest.mark.parametrize("kw", [dict(roster=()), dict(roster=("KRR", "KRR")), dict(roster=("GP",)),
                                dict(layers="4-8-8-1"), dict(scales=(1.0,)), dict(alpha=1.5),
                                dict(scenario=None)])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        constant_spec(**kw)


def test_csv_experiment(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(120, 3))
    y = X @ [1.0, -2.0, 0.5]
    lines = ["a,b,c,y"] + [",".join(repr(v) for v in [*x, t]) for x, t in zip(X.tolist(), y.tolist())]
    (tmp_path / "d.csv").write_text("\n".join(lines))
    spec = ExperimentSpec(roster=("KRR", "RF"), layers="3-8-2-1", dataset_path=str(tmp_path / "d.csv"),
                          target_column="y", rf_features=50)
    report = run_experiment(spec)
    assert all(not r.failed for r in report.results)
    assert report["KRR"].test_mse < np.var(y)


def test_storage_accounting():
    spec = constant_spec(layers="128-256-16-1", scales=(1.0, 1.0))
    net = bench.build_network(spec, residual=False)
    assert net.arch.num_params == 256 * 16 + 16
    assert net.arch.storage_count == 74032


def test_median_time_unstable(monkeypatch):
    durations = itertools.cycle([1.0, 3.0])
    monkeypatch.setattr(bench, "_time_call", lambda fn: next(durations))
    with pytest.raises(TimingUnstable):
        median_time(lambda: None, repeats=5, retries=2)


def test_median_time_recovers_on_retry(monkeypatch):
    # first attempt spreads by 100%, the retry is tight
    seq = iter([1.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.1, 1.0, 1.05, 1.0])
    monkeypatch.setattr(bench, "_time_call", lambda fn: next(seq))
    assert median_time(lambda: None, repeats=5, retries=2) == 1.0


def test_median_time_stable():
    assert median_time(lambda: sum(range(2000)), repeats=5) > 0


def test_scaling_grid_validation():
    with pytest.raises(ValueError):
        scaling_study("KRR", [100, 200])
    with pytest.raises(ValueError):
        scaling_study("KRR", [100, 150, 200])
    with pytest.raises(ValueError):
        scaling_study("XYZ", [100, 200, 400])


def test_loglog_fit_exact():
    n = np.array([10, 100, 1000])
    assert loglog_fit(n, 3.0 * n**2.0)[0] == pytest.approx(2.0)


def test_coverage_table_empty_and_oracle():
    assert coverage_table([], 100, 0) == []
    rows = coverage_table([(ResidualOracle(19), 0.05), (ResidualOracle(9, "uniform"), 0.5)], 2000, 3)
    assert len(rows) == 2 and all(r.inside for r in rows)
    text = format_coverage_table(rows)
    assert len(text.splitlines()) == 3


def test_pipeline_replicate_runs():
    ps = PipelineScenario(Scenario("additive1", 4, 1), 100, 50, "4-8-2-1", (0.4, 1.0),
                          TrainConfig(learning_rate=0.1, max_epochs=50), test_points=20)
    cov, length = ps.replicate(0.1, np.random.default_rng(0))
    assert 0.0 <= cov <= 1.0 and length > 0
    assert ps.modes == ["weighted"]
