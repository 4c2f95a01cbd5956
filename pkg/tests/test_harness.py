import csv
import io
import json

import numpy as np
import pytest

from fedsgd_dp import config, experiment
from fedsgd_dp.config import ConfigError, ExperimentConfig


def small(tmp_path, **extra) -> ExperimentConfig:
    raw = {
        "dataset": {"n_samples": 500, "n_test": 100, "n_features": 4},
        "partition": {"N": 5},
        "schedule": {"b": 2, "T": 10},
        "repeat": 3,
        "output_dir": str(tmp_path / "run"),
    }
    return config.from_dict(config.apply_overrides(raw, [(k.split("__"), v) for k, v in extra.items()]))


def test_defaults_are_valid():
    ExperimentConfig().validate()
    assert ExperimentConfig().is_auto


def test_every_problem_is_reported():
    raw = {"bogus": 1, "partition": {"N": 0, "colour": "red"}, "schedule": {"b": "x"}, "repeat": 0}
    with pytest.raises(ConfigError) as err:
        config.from_dict(raw)
    assert {"bogus: unknown key", "partition.colour: unknown key"} <= set(err.value.problems)
    with pytest.raises(ConfigError) as err:
        config.from_dict({"partition": {"N": 0}, "schedule": {"b": "x"}, "repeat": 0})
    assert len(err.value.problems) >= 3


@pytest.mark.parametrize("patch", [
    {"schedule": {"b": 11}},
    {"budget": {"epsilon": 0}},
    {"mechanism": {"kind": "gaussian"}, "budget": {"delta": 0.0}},
    {"mechanism": {"kind": "none"}},
    {"constants": {"source": "file"}},
    {"partition": {"data_fraction": 1.5}},
    {"dataset": {"source": "idx"}},
])
def test_invalid_configs_raise(patch):
    with pytest.raises(ConfigError):
        config.from_dict(patch)


def test_overrides():
    assert config.parse_override("schedule.b=5") == (["schedule", "b"], 5)
    assert config.parse_override("budget.epsilon=[1, 2]") == (["budget", "epsilon"], [1, 2])
    assert config.parse_override("mechanism.kind=gaussian") == (["mechanism", "kind"], "gaussian")
    with pytest.raises(ConfigError):
        config.parse_override("schedule.b")
    raw = {"schedule": {"b": 1}}
    out = config.apply_overrides(raw, ["schedule.b=3", "partition.N=4"])
    assert raw == {"schedule": {"b": 1}}
    assert out == {"schedule": {"b": 3}, "partition": {"N": 4}}
    cfg = config.with_overrides(ExperimentConfig(), ["mechanism.kind=gaussian", "mechanism.q=0.1", "budget.delta=1e-5"])
    assert cfg.mechanism.kind == "gaussian" and cfg.budget.delta == 1e-5


def test_config_round_trips_through_json(tmp_path):
    cfg = small(tmp_path)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert config.load(p) == cfg
    p.write_text("{nope")
    with pytest.raises(ConfigError):
        config.load(p)


def test_trial_seeds_are_distinct():
    assert len({experiment.trial_seed(0, k) for k in range(100)}) == 100


def test_results_directory(tmp_path):
    res = experiment.run_experiment(small(tmp_path))
    out = tmp_path / "run"
    assert sorted(p.name for p in out.iterdir()) == ["aggregate.csv", "summary.json", "trace.csv"]
    rows = list(csv.DictReader(io.StringIO((out / "trace.csv").read_text())))
    assert len(rows) == 3 * 10 and list(rows[0]) == experiment.TRACE_COLUMNS
    summary = json.loads((out / "summary.json").read_text())
    assert (summary["b"], summary["T"], summary["repeat"]) == (2, 10, 3)
    assert summary["final_loss_std"] == pytest.approx(np.std(summary["final_loss"], ddof=1), rel=1e-12)
    assert summary["final_loss_mean"] == pytest.approx(res.final_loss_mean, rel=1e-15)


def test_aggregate_matches_trace_columns(tmp_path):
    experiment.run_experiment(small(tmp_path))
    out = tmp_path / "run"
    trace = list(csv.DictReader(io.StringIO((out / "trace.csv").read_text())))
    agg = list(csv.DictReader(io.StringIO((out / "aggregate.csv").read_text())))
    for row in agg:
        loss = [float(r["loss"]) for r in trace if r["t"] == row["t"]]
        acc = [float(r["acc"]) for r in trace if r["t"] == row["t"]]
        assert abs(float(row["loss_mean"]) - np.mean(loss)) <= 1e-12 * abs(np.mean(loss))
        assert abs(float(row["acc_mean"]) - np.mean(acc)) <= 1e-12
        assert float(row["loss_std"]) == pytest.approx(np.std(loss, ddof=1), rel=1e-12)


def test_trace_is_byte_identical_on_rerun(tmp_path):
    cfg = small(tmp_path)
    experiment.run_experiment(cfg)
    first = (tmp_path / "run" / "trace.csv").read_bytes()
    experiment.run_experiment(cfg)
    assert (tmp_path / "run" / "trace.csv").read_bytes() == first
    experiment.run_experiment(config.with_overrides(cfg, ["seed=1"]))
    assert (tmp_path / "run" / "trace.csv").read_bytes() != first


def test_abort_leaves_no_partial_output(tmp_path, monkeypatch):
    cfg = small(tmp_path)

    def boom(traces):
        raise RuntimeError("disk full")

    monkeypatch.setattr(experiment, "aggregate_csv", boom)
    with pytest.raises(RuntimeError):
        experiment.run_experiment(cfg)
    assert list(tmp_path.iterdir()) == []


def test_abort_keeps_previous_results(tmp_path, monkeypatch):
    cfg = small(tmp_path)
    experiment.run_experiment(cfg)
    before = (tmp_path / "run" / "trace.csv").read_bytes()
    monkeypatch.setattr(experiment, "aggregate_csv", lambda traces: 1 / 0)
    with pytest.raises(ZeroDivisionError):
        experiment.run_experiment(config.with_overrides(cfg, ["seed=9"]))
    assert (tmp_path / "run" / "trace.csv").read_bytes() == before
    assert [p.name for p in tmp_path.iterdir()] == ["run"]


def test_auto_plan_is_written(tmp_path):
    cfg = small(tmp_path, schedule__b="auto", schedule__T="auto", repeat=1)
    res = experiment.run_experiment(cfg)
    plan = json.loads((tmp_path / "run" / "plan.json").read_text())
    assert (plan["selected"]["T"], plan["selected"]["b"]) == (res.T, res.b)
    assert json.loads((tmp_path / "run" / "summary.json").read_text())["constants"]["N"] == 5


def test_partial_auto(tmp_path):
    cfg = small(tmp_path, schedule__T="auto", repeat=1)
    res = experiment.run_experiment(cfg, write=False)
    assert res.b == 2 and res.T >= 0


def test_zero_rounds_still_reports(tmp_path):
    res = experiment.run_experiment(small(tmp_path, schedule__T=0, repeat=2))
    assert np.all(np.isfinite(res.final_loss))
    assert (tmp_path / "run" / "trace.csv").read_text().count("\n") == 1


def test_single_value_sweep_matches_run(tmp_path):
    cfg = small(tmp_path)
    rows, results = experiment.sweep(cfg, "b", [3])
    direct = experiment.run_experiment(config.with_overrides(cfg, ["schedule.b=3"]), write=False)
    assert rows[0].final_loss_mean == direct.final_loss_mean
    assert (tmp_path / "run" / "b=3" / "trace.csv").exists()
    assert np.array_equal(results[0].final_acc, direct.final_acc)


def test_sweep_survives_a_bad_value(tmp_path):
    rows, _ = experiment.sweep(small(tmp_path), "b", [1, 99, 5])
    assert [r.error is None for r in rows] == [True, False, True]
    summary = list(csv.DictReader(io.StringIO((tmp_path / "run" / "sweep_summary.csv").read_text())))
    assert [s["b"] for s in summary] == ["1", "", "5"]
    assert "failed" in experiment.format_sweep("b", rows)


def test_data_fraction_sweep(tmp_path):
    rows, results = experiment.sweep(small(tmp_path), "data_fraction", [0.5, 1.0])
    sizes = [r.config.partition.data_fraction for r in results]
    assert sizes == [0.5, 1.0]
    half = experiment.prepare_data(results[0].config).partition.total_size
    full = experiment.prepare_data(results[1].config).partition.total_size
    assert half < full
    with pytest.raises(ConfigError):
        experiment.sweep(small(tmp_path), "colour", [1])


def test_accuracy_grows_with_data_fraction(tmp_path):
    # Laplace noise scales with 1/d_i, so thinner clients train worse at the same budget
    cfg = config.with_overrides(ExperimentConfig(), ["schedule.b=1", "schedule.T=29", f"output_dir={tmp_path}"])
    rows, _ = experiment.sweep(cfg, "data_fraction", [0.25, 0.5, 1.0])
    accs = [r.final_acc_mean for r in rows]
    assert accs == sorted(accs)
