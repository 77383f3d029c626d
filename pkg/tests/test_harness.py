import csv
import json

import numpy as np
import pytest

from halting_lab.cli import main
from halting_lab.harness import (
    ConfigError,
    ExperimentConfig,
    emit,
    ks_table,
    load_config,
    resolve_workers,
    run_experiment,
)

SMALL = dict(ensembles=["LOE", "BE"], N=[20], d=[0.5], num_samples=20, master_seed=3)


def small(kind, **kw):
    return ExperimentConfig.from_dict(dict(SMALL, experiment=kind, **kw))


def write_config(tmp_path, **raw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return str(path)


def test_config_rejections():
    with pytest.raises(ConfigError, match="unknown configuration fields: colour"):
        ExperimentConfig.from_dict({"experiment": "halting", "colour": "red"})
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig.from_dict({"experiment": "halting", "convention": {"include_2pow": True, "x": 1}})
    with pytest.raises(ConfigError, match="alpha"):
        ExperimentConfig.from_dict({"experiment": "halting", "alpha": 2.0})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "halting", "d": [1.5]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "halting", "ensembles": ["GUE"]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "teleport"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"alpha": 6})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "halting", "convention": {"d_exponent": 2}})


def test_config_round_trip(tmp_path):
    cfg = small("halting", convention={"include_2pow": False, "d_exponent": 0.5}, zeta={"QR": 0.1})
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert load_config(write_config(tmp_path, **cfg.to_dict())) == cfg
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_resolve_workers(monkeypatch):
    cfg = small("halting", workers=3)
    monkeypatch.setenv("HALTING_LAB_WORKERS", "2")
    assert resolve_workers(5, cfg) == 5
    assert resolve_workers(None, cfg) == 3
    assert resolve_workers(None, small("halting")) == 2
    monkeypatch.delenv("HALTING_LAB_WORKERS")
    assert resolve_workers(None, None) == 1


def test_ks_table():
    t = ks_table({"b": [1.0, 2.0, 3.0], "a": [2.0, 3.0, 4.0], "c": [1.0, 2.0, 3.0]})
    m = np.array(t["matrix"])
    assert t["labels"] == ["a", "b", "c"]
    assert np.array_equal(m, m.T) and np.all(np.diag(m) == 0)
    assert m[1, 2] == 0.0 and m[0, 1] == pytest.approx(1 / 3)


@pytest.mark.parametrize("kind", ["halting", "errors", "gap-law", "zeta", "deflation", "projections", "conditions"])
def test_every_kind_runs_and_accounts(tmp_path, kind):
    cfg = small(kind, p_grid=[0.1, 0.5]) if kind == "conditions" else small(kind)
    bundle = run_experiment(cfg, workers=1)
    assert bundle.complete and bundle.error is None
    for acc in bundle.accounting.values():
        assert acc["records"] + acc["capped"] + acc["degenerate"] == acc["requested"]
    paths = emit(bundle, tmp_path)
    with open(paths[0]) as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == len(bundle.records) + 1 and tuple(rows[0]) == bundle.columns
    summary = json.loads(paths[1].read_text())
    assert summary["experiment"] == kind and summary["config"]["num_samples"] == 20
    json.loads(paths[2].read_text())


def test_halting_records_and_rescaling():
    bundle = run_experiment(small("halting"), workers=1)
    assert len(bundle.records) == 2 * 20 * 3
    for r in bundle.records:
        assert r["tau"] >= 0 and r["rescaled_tau"] > 0 and r["T_continuous"] <= r["tau"] < r["T_continuous"] + 1
    ks = bundle.summary["ks"]
    assert any(k.startswith("ensembles") for k in ks) and any(k.startswith("algorithms") for k in ks)


def test_reruns_are_byte_identical(tmp_path):
    cfg = small("halting")
    a, b = tmp_path / "a", tmp_path / "b"
    emit(run_experiment(cfg, workers=1), a)
    emit(run_experiment(cfg, workers=2), b)
    for name in ("halting.csv", "halting.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_changes_output(tmp_path):
    a = run_experiment(small("zeta"), workers=1)
    b = run_experiment(small("zeta", master_seed=4), workers=1)
    assert a.summary != b.summary


def test_validation_summary():
    bundle = run_experiment(small("validate"), workers=1)
    assert bundle.summary["passed"]
    assert set(bundle.summary["invariants"]) == {"isospectral_iterates", "power_qr_identity",
                                                 "error_closed_form", "parseval"}
    for v in bundle.summary["cross_path"].values():
        assert v["fraction_within_1"] == 1.0


def test_emit_rejects_bad_format(tmp_path):
    bundle = run_experiment(small("zeta"), workers=1)
    with pytest.raises(ValueError):
        emit(bundle, tmp_path, formats=("xml",))
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="failed writing"):
        emit(bundle, blocker / "sub")


def test_cli_exit_codes(tmp_path, capsys):
    out = str(tmp_path / "out")
    assert main(["halting", "--config", write_config(tmp_path, experiment="halting", alpha=1.0)]) == 2
    assert main(["halting"]) == 2
    assert main(["zeta", "--config", write_config(tmp_path, experiment="halting", **SMALL)]) == 2
    assert main(["halting", "--config", write_config(tmp_path, experiment="halting", **SMALL), "--format", "xml"]) == 2
    assert "configuration rejected" in capsys.readouterr().err

    cfg = write_config(tmp_path, experiment="halting", **SMALL)
    assert main(["halting", "--config", cfg, "--out", out, "--seed", "9"]) == 0
    written = json.loads((tmp_path / "out" / "halting.json").read_text())
    assert written["config"]["master_seed"] == 9

    capped = write_config(tmp_path, experiment="deflation", cap=1, **SMALL)
    assert main(["deflation", "--config", capped, "--out", out]) == 3


def test_cli_validate_defaults(tmp_path):
    assert main(["validate", "--out", str(tmp_path / "v")]) == 0
    assert json.loads((tmp_path / "v" / "validate.json").read_text())["summary"]["passed"]


def test_cli_json_only(tmp_path):
    cfg = write_config(tmp_path, experiment="validate", ensembles=["LOE"], N=[12], d=[0.5], num_samples=5)
    assert main(["validate", "--config", cfg, "--out", str(tmp_path), "--format", "json"]) == 0
    assert (tmp_path / "validate.json").exists() and not (tmp_path / "validate.csv").exists()
