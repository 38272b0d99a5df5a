import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from sfp.cli import run
from sfp.data import gen_synthetic, write_csv


@pytest.fixture
def mixture_csv(tmp_path):
    path = tmp_path / "data.csv"
    assert run(["gen", "--kind", "mixture3", "--n", "500", "--seed", "1", "--out", str(path)]) == 0
    return path


def _train(tmp_path, data, *extra):
    model = tmp_path / "m.json"
    code = run(["train", "--data", str(data), "--label", "y", "--k", "4", "--alpha", "1",
                "--gamma", "0.05", "--lambda", "25", "--seed", "7", "--model", str(model), *extra])
    return code, model


def test_gen_train_predict(tmp_path, mixture_csv):
    code, model = _train(tmp_path, mixture_csv)
    assert code == 0 and model.exists()
    doc = json.loads(model.read_text())
    assert doc["version"] == "sfp-model/1" and doc["k"] == 4 and doc["M"] == 3
    out = tmp_path / "preds.csv"
    assert run(["predict", "--model", str(model), "--data", str(mixture_csv), "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["id", "predicted_label", "score_class_1", "score_class_2", "score_class_3",
                       "membership_1", "membership_2", "membership_3", "membership_4"]
    assert len(rows) == 501
    body = np.array([[float(v) for v in r[2:]] for r in rows[1:]])
    np.testing.assert_allclose(body[:, :3].sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(body[:, 3:].sum(axis=1), 1.0, atol=1e-12)
    assert {r[1] for r in rows[1:]} <= {"1", "2", "3"}


def test_train_is_deterministic(tmp_path, mixture_csv):
    _, m = _train(tmp_path, mixture_csv)
    first = m.read_text()
    _, m = _train(tmp_path, mixture_csv)
    assert m.read_text() == first


def test_gme_check_report(tmp_path, capsys):
    assert run(["gme-check", "--n", "30", "--k", "2", "--iters", "10", "--seed", "3"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["max_U_gap"] < 1e-8
    assert {"max_U_gap", "max_param_gap", "loglik_trace", "J_trace"} <= set(rep)


def test_seed_required(tmp_path, mixture_csv, capsys):
    code = run(["train", "--data", str(mixture_csv), "--k", "4", "--alpha", "1", "--gamma", "0.05",
                "--lambda", "25", "--model", str(tmp_path / "m.json")])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert "seed" in err["message"]
    assert run(["gme-check"]) == 2
    assert run(["gen", "--kind", "xor", "--n", "10", "--out", str(tmp_path / "x.csv")]) == 2


def test_exit_codes(tmp_path, mixture_csv):
    assert run(["bogus"]) == 2
    assert run([]) == 2
    assert run(["train", "--data", str(tmp_path / "nope.csv"), "--k", "2", "--alpha", "1",
                "--gamma", "1", "--lambda", "1", "--seed", "1", "--model", "m.json"]) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("a,y\n")
    assert run(["train", "--data", str(bad), "--k", "2", "--alpha", "1", "--gamma", "1",
                "--lambda", "1", "--seed", "1", "--model", "m.json"]) == 3
    assert run(["train", "--data", str(mixture_csv), "--k", "1", "--alpha", "1", "--gamma", "1",
                "--lambda", "1", "--seed", "1", "--model", str(tmp_path / "m.json")]) == 2


def test_numeric_failure_exit_code(tmp_path):
    # centers so far away that every squared distance overflows: no finite cost in the row
    model = tmp_path / "m.json"
    doc = {"version": "sfp-model/1", "loss_kind": "logloss", "k": 2, "p": 1, "M": 2,
           "centers": [[1e200], [-1e200]], "weights": [[1.0], [1.0]],
           "prototypes": [[0.5, 0.5], [0.5, 0.5]],
           "hyperparams": {"k": 2, "alpha": 1.0, "gamma": 1.0, "lambda": 1.0},
           "preprocess_stats": None, "class_names": ["a", "b"], "feature_names": ["x"]}
    model.write_text(json.dumps(doc))
    data = tmp_path / "d.csv"
    data.write_text("x\n0\n")
    assert run(["predict", "--model", str(model), "--data", str(data),
                "--out", str(tmp_path / "p.csv")]) == 4


def test_primed_hyperparameters_win_with_warning(tmp_path, mixture_csv):
    with pytest.warns(UserWarning, match="primed"):
        code, model = _train(tmp_path, mixture_csv, "--gamma-prime", "0.8")
    assert code == 0
    assert json.loads(model.read_text())["hyperparams"]["gamma"] == pytest.approx(0.25)


def test_config_file_defaults_and_override(tmp_path, mixture_csv):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": 3, "alpha": 1.0, "gamma": 0.5, "lambda": 2.0, "seed": 4,
                               "data": str(mixture_csv), "model": str(tmp_path / "c.json")}))
    assert run(["--config", str(cfg), "train", "--k", "5"]) == 0
    doc = json.loads((tmp_path / "c.json").read_text())
    assert doc["k"] == 5 and doc["hyperparams"]["lambda"] == 2.0
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert run(["--config", str(cfg), "train"]) == 2


def test_cv_and_tune(tmp_path, capsys, monkeypatch):
    data = tmp_path / "xor.csv"
    write_csv(gen_synthetic("xor", 60, 0), data)
    assert run(["cv", "--data", str(data), "--k", "6", "--alpha-prime", "0.3", "--gamma-prime", "0.6",
                "--lambda-prime", "0.5", "--seed", "2", "--folds", "3"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert 0 <= rep["accuracy"] <= 1 and rep["auc"] is not None
    monkeypatch.setenv("SFP_THREADS", "2")
    report = tmp_path / "tune.csv"
    assert run(["tune", "--data", str(data), "--seed", "1", "--folds", "3", "--max-iters", "5",
                "--report", str(report)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["grid_points"] == 250 and set(out["selected"]) == {"k", "alpha", "gamma", "lambda"}
    assert len(report.read_text().splitlines()) == 251


def test_select_features_and_decision_grid(tmp_path, mixture_csv, capsys):
    _, model = _train(tmp_path, mixture_csv)
    assert run(["select-features", "--model", str(model)]) == 0
    sel = json.loads(capsys.readouterr().out)
    assert len(sel["per_cluster"]) == 4 and set(sel["union"]) <= {"x1", "x2"}
    grid = tmp_path / "grid.csv"
    assert run(["decision-grid", "--model", str(model), "--data", str(mixture_csv),
                "--out", str(grid)]) == 0
    rows = list(csv.reader(grid.open()))
    assert rows[0] == ["x1", "x2", "predicted_label"] and len(rows) == 200 * 200 + 1
    assert run(["decision-grid", "--model", str(model), "--bounds", "-1", "1", "-1", "1",
                "--resolution", "5", "--out", str(grid)]) == 0
    assert len(grid.read_text().splitlines()) == 26
    assert run(["decision-grid", "--model", str(model), "--out", str(grid)]) == 2


def test_module_entry_point(tmp_path):
    out = tmp_path / "g.csv"
    proc = subprocess.run([sys.executable, "-m", "sfp", "gen", "--kind", "spiral", "--n", "20",
                           "--seed", "0", "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert len(out.read_text().splitlines()) == 21
