import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from shapguide import cli, experiment
from shapguide.dataset import Dataset, Task, synth_sparse, to_csv
from shapguide.errors import InvariantViolation
from shapguide.trees import Ensemble, deserialize, serialize

SMALL_BOOST = {"num_rounds": 10, "max_depth": 3, "min_leaf_count": 5}


def write_data(path, n=20, seed=0, task=Task.REGRESSION):
    path.write_text(to_csv(synth_sparse(n, 2, 2, seed=seed, task=task), "y"))
    return path


def write_config(tmp_path, **over):
    cfg = {
        "dataset": {"path": "data.csv", "target": "y", "task": "regression"},
        "seed": 0,
        "models": ["gbdt_baseline"],
        "output_dir": "out",
    }
    cfg.update(over)
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg))
    return p


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_smoke_single_model(tmp_path):
    write_data(tmp_path / "data.csv")
    assert cli.main(["run", str(write_config(tmp_path))]) == 0
    rows = read_rows(tmp_path / "out" / "results.csv")
    assert len(rows) == 1 and rows[0]["model"] == "gbdt_baseline"
    e = deserialize((tmp_path / "out" / "models" / "gbdt_baseline.json").read_text())
    assert isinstance(e, Ensemble)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["seed"] == 0 and "results.csv" in manifest["files"]


def test_inert_guided_model_matches_baseline(tmp_path):
    write_data(tmp_path / "data.csv", n=120)
    cfg = write_config(tmp_path, models=["gbdt_baseline", "gbdt_shap_guided"], boost=SMALL_BOOST,
                       reg={"lambda1": 0.0, "lambda2": 0.0})
    assert cli.main(["run", str(cfg)]) == 0
    base, guided = read_rows(tmp_path / "out" / "results.csv")
    assert {k: v for k, v in base.items() if k != "model"} == {k: v for k, v in guided.items() if k != "model"}
    models = tmp_path / "out" / "models"
    assert (models / "gbdt_baseline.json").read_bytes() == (models / "gbdt_shap_guided.json").read_bytes()


def test_grid_writes_tuning_table(tmp_path):
    write_data(tmp_path / "data.csv", n=80)
    cfg = write_config(tmp_path, models=["gbdt_shap_guided"], boost=SMALL_BOOST,
                       grid={"lambda1_values": [0.0, 0.5, 1.0], "lambda2_values": [0.0, 0.1], "folds": 3})
    assert cli.main(["run", str(cfg)]) == 0
    assert len(read_rows(tmp_path / "out" / "tuning.csv")) == 3 * 6
    assert cli.main(["tune", str(cfg), "--out", str(tmp_path / "tuned")]) == 0
    best = json.loads((tmp_path / "tuned" / "best_config.json").read_text())
    assert set(best["reg"]) >= {"lambda1", "lambda2"}


def test_all_models_and_explain_round_trip(tmp_path):
    write_data(tmp_path / "data.csv", n=100)
    cfg = write_config(tmp_path, models=list(experiment.MODEL_KINDS), boost=SMALL_BOOST,
                       reg={"lambda1": 0.2, "lambda2": 0.05}, forest={"n_trees": 5}, linear={"steps": 50})
    assert cli.main(["run", str(cfg), "--workers", "2"]) == 0
    out = tmp_path / "out"
    assert [r["model"] for r in read_rows(out / "results.csv")] == list(experiment.MODEL_KINDS)
    for kind in experiment.MODEL_KINDS:
        assert (out / "plots" / f"{kind}_summary.svg").exists()
    assert (out / "variance.csv").exists() and (out / "plots" / "variance.svg").exists()
    # the saved linear model reads raw feature columns
    assert cli.main(["explain", str(out / "models" / "linear_reference.json"), str(tmp_path / "data.csv"),
                     "--out", str(tmp_path / "ex")]) == 0
    assert (tmp_path / "ex" / "shap_values.csv").read_text().startswith("# base_value=")


def test_seed_override_changes_results(tmp_path):
    write_data(tmp_path / "data.csv", n=60)
    cfg = write_config(tmp_path, boost=SMALL_BOOST)
    cli.main(["run", str(cfg), "--out", str(tmp_path / "a")])
    cli.main(["run", str(cfg), "--seed", "3", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "results.csv").read_bytes() != (tmp_path / "b" / "results.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["config"]["seed"] == 3


def test_config_errors_exit_one(tmp_path, capsys):
    write_data(tmp_path / "data.csv")
    assert cli.main(["run", str(write_config(tmp_path, boost={"seed": 3}))]) == 1
    assert "boost" in capsys.readouterr().err
    assert cli.main(["run", str(write_config(tmp_path, models=["xgboost"]))]) == 1
    assert cli.main(["run", str(tmp_path / "missing.json")]) == 1
    assert cli.main(["run", str(write_config(tmp_path, dataset={"path": "nope.csv", "target": "y",
                                                                  "task": "regression"}))]) == 1
    assert "load dataset" in capsys.readouterr().err


def test_invariant_violation_exits_two(tmp_path, monkeypatch, capsys):
    write_data(tmp_path / "data.csv")

    def broken(cfg):
        raise InvariantViolation("synthetic failure")

    monkeypatch.setattr(experiment, "run_experiment", broken)
    assert cli.main(["run", str(write_config(tmp_path))]) == 2
    assert "invariant" in capsys.readouterr().err


def test_failed_run_leaves_no_output(tmp_path):
    # a constant column makes the linear model's standardization fail after the trees trained
    X = np.column_stack([np.ones(40), np.arange(40.0)])
    (tmp_path / "data.csv").write_text(to_csv(Dataset(X, np.arange(40.0), ["c", "x"], Task.REGRESSION), "y"))
    cfg = write_config(tmp_path, models=["gbdt_baseline", "linear_reference"], boost=SMALL_BOOST)
    assert cli.main(["run", str(cfg)]) == 1
    assert not (tmp_path / "out").exists()
    assert [p.name for p in tmp_path.iterdir()] and not any(p.name.startswith(".out") for p in tmp_path.iterdir())


def _empty_model(path, names):
    path.write_text(serialize(Ensemble(0.5, (), 0.1, Task.REGRESSION, names)))
    return path


def test_explain_empty_ensemble(tmp_path):
    write_data(tmp_path / "data.csv")
    model = _empty_model(tmp_path / "m.json", ["x0", "x1", "noise0", "noise1"])
    assert cli.main(["explain", str(model), str(tmp_path / "data.csv"), "--out", str(tmp_path / "ex")]) == 0
    lines = (tmp_path / "ex" / "shap_values.csv").read_text().splitlines()
    assert lines[0] == "# base_value=0.5" and len(lines) == 22
    assert all(v == "0" for line in lines[2:] for v in line.split(","))
    assert (tmp_path / "ex" / "summary.svg").read_text().count('class="band-label"') == 4


def test_explain_schema_mismatch(tmp_path, capsys):
    write_data(tmp_path / "data.csv")
    model = _empty_model(tmp_path / "m.json", ["x0", "zzz"])
    assert cli.main(["explain", str(model), str(tmp_path / "data.csv"), "--out", str(tmp_path / "ex")]) == 1
    assert "zzz" in capsys.readouterr().err
    assert not (tmp_path / "ex").exists()


def test_variance_compare_self_and_constant(tmp_path):
    write_data(tmp_path / "data.csv", n=100)
    assert cli.main(["run", str(write_config(tmp_path, boost=SMALL_BOOST))]) == 0
    model = tmp_path / "out" / "models" / "gbdt_baseline.json"
    assert cli.main(["variance-compare", str(model), str(model), str(tmp_path / "data.csv"),
                     "--out", str(tmp_path / "vc")]) == 0
    rows = read_rows(tmp_path / "vc" / "variance.csv")
    assert all(r["variance_a"] == r["variance_b"] for r in rows)
    svg = (tmp_path / "vc" / "variance.svg").read_text()
    assert svg.count('class="bar series-0"') == svg.count('class="bar series-1"') == 4
    const = _empty_model(tmp_path / "const.json", ["x0", "x1", "noise0", "noise1"])
    assert cli.main(["variance-compare", str(const), str(const), str(tmp_path / "data.csv"),
                     "--out", str(tmp_path / "vc0")]) == 0
    assert all(r["variance_a"] == "0" for r in read_rows(tmp_path / "vc0" / "variance.csv"))


def test_encode_command(tmp_path, capsys):
    (tmp_path / "raw.csv").write_text("kind,y\ncat,1\ndog,2\n")
    assert cli.main(["encode", str(tmp_path / "raw.csv"), str(tmp_path / "enc.csv")]) == 0
    assert (tmp_path / "enc.csv").read_text() == "kind,y\n0,1\n1,2\n"
    assert "kind: 2 codes" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    write_data(tmp_path / "data.csv")
    r = subprocess.run([sys.executable, "-m", "shapguide", "run", str(write_config(tmp_path))],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "out" / "results.csv").exists()
