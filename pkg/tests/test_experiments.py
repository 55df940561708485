import json
import os

import numpy as np
import pytest

from icebeem.errors import ConfigError, NumericalError
from icebeem.experiments import (
    ExperimentConfig,
    config_from_dict,
    load_config,
    load_report,
    load_schema,
    rerun_from_report,
    run_consistency,
    run_experiment,
    run_semisup,
    run_simulation,
    run_transfer,
)
from icebeem.serialize import load_model

TINY = {
    "data": {"d": 3, "M": 4, "n_per_segment": 60, "mixing_layers": 2, "seed": 1},
    "model": {"hidden": [8]},
    "training": {"iterations": 30, "batch_size": 16},
    "baseline": {"iterations": 30, "batch_size": 16},
}


def tiny(experiment, **extra):
    raw = json.loads(json.dumps(TINY))
    raw["experiment"] = experiment
    for key, val in extra.items():
        if isinstance(val, dict):
            raw.setdefault(key, {}).update(val)
        else:
            raw[key] = val
    return raw


def test_schema_is_strict():
    assert load_schema()["additionalProperties"] is False
    with pytest.raises(ConfigError, match="unexpected|Additional"):
        config_from_dict({"experiment": "simulation", "bogus": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"experiment": "simulation", "training": {"sigma": -1}})
    with pytest.raises(ConfigError):
        config_from_dict({"experiment": "nothing"})


@pytest.mark.parametrize(
    "raw, match",
    [
        (tiny("transfer"), "held_out"),
        (tiny("transfer", eval={"held_out_segments": [9]}), "held_out"),
        (tiny("transfer", eval={"held_out_segments": [1, 1]}), "duplicates|non-unique"),
        (tiny("semisup", eval={"held_out_segments": [1]}), "two held-out"),
        (tiny("consistency", eval={"n_seeds": 1}), "two seeds"),
        (tiny("simulation", model={"d_z": 2}), "d_z"),
        (tiny("simulation", model={"mode": "positive"}), "positive"),
    ],
)
def test_semantic_validation(raw, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(raw)


def test_load_config_errors_name_the_path(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ConfigError, match="nope.json"):
        load_config(missing)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="bad.json"):
        load_config(bad)


def test_config_round_trip_and_run_id():
    cfg = config_from_dict(tiny("simulation"))
    again = config_from_dict(cfg.to_dict())
    assert again == cfg and again.run_id() == cfg.run_id()
    moved = config_from_dict({**cfg.to_dict(), "output_dir": "elsewhere", "workers": 2})
    assert moved.run_id() == cfg.run_id()
    assert config_from_dict({**cfg.to_dict(), "seed": 5}).run_id() != cfg.run_id()
    assert cfg.f_spec.dims == (3, 8, 3)
    assert config_from_dict(tiny("simulation", seeds=[4, 9])).run_seeds == [4, 9]


def test_simulation_report_layout(tmp_path):
    report = run_simulation(config_from_dict(tiny("simulation")), tmp_path)
    run_dir = tmp_path / report["run_id"]
    assert run_dir.is_dir() and not list(tmp_path.glob("*.tmp"))
    on_disk = load_report(run_dir / "report.json")
    assert on_disk["metrics"] == report["metrics"]
    assert {"metrics.csv", "histories.csv"} <= set(on_disk["artifacts"])
    for rel in on_disk["artifacts"]:
        assert (run_dir / rel).exists()
    summary = report["metrics"]["summary"]
    for key in ("mean_icebeem_mcc", "mean_tcl_mcc", "mean_identity_mcc", "mean_icebeem_mcc_strong", "icebeem_beats_tcl"):
        assert key in summary
    assert len(report["metrics"]["runs"]) == 3
    header = (run_dir / "metrics.csv").read_text().splitlines()[0]
    assert header.startswith("run_seed,icebeem_mcc")


def test_zero_iterations_reports_untrained_level(tmp_path):
    raw = tiny("simulation", training={"iterations": 0}, eval={"n_seeds": 1})
    report = run_simulation(config_from_dict(raw), tmp_path)
    assert 0.0 <= report["metrics"]["summary"]["mean_icebeem_mcc"] <= 1.0


def test_consistency_unconditional_g_stays_at_ones(tmp_path):
    report = run_consistency(config_from_dict(tiny("consistency")), tmp_path)
    summary = report["metrics"]["summary"]
    M = np.array(summary["conditional_strong_matrix"])
    assert M.shape == (3, 3) and np.allclose(M, M.T) and np.all(np.diag(M) == 1.0)
    assert all(r["unconditional_g_deviation"] == 0.0 for r in report["metrics"]["runs"])
    run_dir = tmp_path / report["run_id"]
    model = load_model(run_dir / "models" / "seed0_unconditional.icebeem")
    assert np.all(model.g.table == 1.0)


def test_transfer_sweep_and_descent(tmp_path):
    raw = tiny("transfer", eval={"held_out_segments": [3], "sample_sizes": [10, 30], "n_seeds": 2})
    report = run_transfer(config_from_dict(raw), tmp_path)
    sweep = report["metrics"]["sweep"]
    assert [e["n_per_segment"] for e in sweep[0]] == [10, 30]
    assert all(e["fit_score"] <= e["init_score"] and e["descent"] for run in sweep for e in run)
    assert (tmp_path / report["run_id"] / "sweep.csv").exists()
    with pytest.raises(ConfigError, match="sample_sizes"):
        run_transfer(config_from_dict(tiny("transfer", eval={"held_out_segments": [3], "sample_sizes": [31]})), tmp_path)


def test_semisup_arms(tmp_path):
    report = run_semisup(config_from_dict(tiny("semisup", eval={"held_out_segments": [2, 3], "n_seeds": 1})), tmp_path)
    run = report["metrics"]["runs"][0]
    for arm in ("conditional", "unconditional", "identity"):
        assert 0.0 <= run[f"{arm}_accuracy"] <= 1.0


def test_wrong_runner_rejected(tmp_path):
    with pytest.raises(ConfigError):
        run_transfer(config_from_dict(tiny("simulation")), tmp_path)


@pytest.mark.parametrize(
    "raw",
    [
        tiny("simulation", eval={"n_seeds": 2}),
        tiny("consistency", eval={"n_seeds": 2}),
        tiny("transfer", eval={"held_out_segments": [3], "n_seeds": 2}),
        tiny("semisup", eval={"held_out_segments": [2, 3], "n_seeds": 2}),
    ],
    ids=["simulation", "consistency", "transfer", "semisup"],
)
def test_rerun_from_report_is_bit_identical(raw, tmp_path):
    first = run_experiment(config_from_dict(raw), tmp_path / "a")
    second = rerun_from_report(load_report(first["path"]), tmp_path / "b")
    assert json.dumps(first["metrics"], sort_keys=True) == json.dumps(second["metrics"], sort_keys=True)
    assert first["run_id"] == second["run_id"]


def test_worker_pool_matches_serial(tmp_path):
    raw = tiny("simulation", eval={"n_seeds": 2})
    serial = run_experiment(config_from_dict(raw), tmp_path / "s")
    pooled = run_experiment(config_from_dict({**raw, "workers": 2}), tmp_path / "p")
    assert serial["metrics"] == pooled["metrics"]


def test_failed_run_leaves_no_directory(tmp_path, monkeypatch):
    import icebeem.experiments as ex

    def boom(*a, **k):
        raise NumericalError("injected")

    monkeypatch.setattr(ex, "_write_artifacts", boom)
    with pytest.raises(NumericalError):
        run_experiment(config_from_dict(tiny("simulation", eval={"n_seeds": 1})), tmp_path)
    assert os.listdir(tmp_path) == []


def test_non_finite_metrics_rejected(tmp_path, monkeypatch):
    import icebeem.experiments as ex

    real = ex._simulation_summary
    monkeypatch.setitem(ex._RUNNERS, "simulation", (ex._simulation_run, lambda runs, cfg: {**real(runs, cfg), "bad": float("nan")}))
    with pytest.raises(NumericalError, match="bad"):
        run_experiment(config_from_dict(tiny("simulation", eval={"n_seeds": 1})), tmp_path)


def test_docs_schema_matches_packaged_schema():
    from pathlib import Path

    docs = Path(__file__).resolve().parent.parent / "docs" / "experiment.schema.json"
    assert json.loads(docs.read_text()) == load_schema()


def test_shipped_configs_load():
    from pathlib import Path

    configs = sorted((Path(__file__).resolve().parent.parent / "configs").glob("*.json"))
    assert len(configs) == 6
    for path in configs:
        load_config(path)
