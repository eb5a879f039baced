from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import pytest

from pilecurves import cli, dataset

GOLDEN = Path(__file__).parent / "golden" / "help.txt"
FLAGS = ("--config", "--seed", "--out", "--split", "--budget", "--span", "--degree", "--case", "--zd", "--springs",
         "--model")


@pytest.fixture(autouse=True)
def fixed_width(monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = {"data": {"generator": {"n_curves": 30}, "seed": 1}, "gbt": {"n_estimators": 80},
           "solver": {"H_values": [0.0]}, "shap": {"background": 40}}
    (tmp / "cfg.json").write_text(json.dumps(cfg))
    return tmp


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_help_golden():
    text = cli.all_help_text()
    if os.environ.get("UPDATE_GOLDEN"):
        GOLDEN.write_text(text)
    assert text == GOLDEN.read_text()
    for flag in FLAGS:
        assert flag in text


def test_unknown_flag_rejected(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["stats", "--bogus"])
    assert info.value.code != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["status"] == "error"


def test_generate_and_ingest(capsys, workspace):
    code, out, _ = run_cli(capsys, "generate", "--config", str(workspace / "cfg.json"), "--out", str(workspace / "gen"))
    assert code == 0 and json.loads(out)["curves"] == 30
    cfg = {"data": {"cases": "gen/cases.csv"}}
    (workspace / "ingest.json").write_text(json.dumps(cfg))
    code, out, _ = run_cli(capsys, "ingest", "--config", str(workspace / "ingest.json"), "--out", str(workspace / "canon"))
    assert code == 0
    assert (workspace / "canon" / "cases.csv").read_text() == (workspace / "gen" / "cases.csv").read_text()


def test_seed_changes_generated_data(capsys, workspace):
    cfgp = str(workspace / "cfg.json")
    run_cli(capsys, "generate", "--config", cfgp, "--seed", "5", "--out", str(workspace / "g5"))
    run_cli(capsys, "generate", "--config", cfgp, "--seed", "5", "--out", str(workspace / "g5b"))
    run_cli(capsys, "generate", "--config", cfgp, "--seed", "6", "--out", str(workspace / "g6"))
    a, b, c = ((workspace / d / "py_records.csv").read_text() for d in ("g5", "g5b", "g6"))
    assert a == b and a != c


def test_stats_inside_envelopes(capsys, workspace):
    code, _, _ = run_cli(capsys, "stats", "--config", str(workspace / "cfg.json"), "--out", str(workspace / "stats"))
    assert code == 0
    summary = json.loads((workspace / "stats" / "summary.json").read_text())
    for name, (lo, hi) in dataset.TABLE1_ENVELOPES.items():
        if name in summary:
            assert lo - 1e-9 <= summary[name]["min"] and summary[name]["max"] <= hi + 1e-9
    assert (workspace / "stats" / "violin.svg").read_text().count("<polygon") == 7


@pytest.fixture(scope="module")
def trained(workspace):
    code = cli.main(["train", "--config", str(workspace / "cfg.json"), "--out", str(workspace / "train")])
    assert code == 0
    return workspace / "train" / "model.json"


def test_train_outputs(trained):
    trace = trained.parent / "training_trace.csv"
    rows = trace.read_text().splitlines()
    assert rows[0] == "round,train_rmse,validation_rmse" and len(rows) == 82
    assert rows[1].startswith("0,") and rows[-1].startswith("80,")


def test_predict_one_row_per_grid_point(capsys, workspace, trained):
    code, out, _ = run_cli(capsys, "predict", "--config", str(workspace / "cfg.json"), "--model", str(trained),
                           "--case", "S01", "--zd", "2", "--out", str(workspace / "pred"))
    assert code == 0
    path = Path(json.loads(out)["files"][0])
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 44 and list(rows[0]) == ["y_over_D", "p_bar", "p_kNm"]


def test_smooth(capsys, workspace, trained):
    code, out, _ = run_cli(capsys, "smooth", "--config", str(workspace / "cfg.json"), "--model", str(trained),
                           "--case", "S02", "--zd", "1.5", "--span", "0.4", "--degree", "1",
                           "--out", str(workspace / "smooth"))
    assert code == 0
    files = json.loads(out)["files"]
    assert Path(files[0]).read_text().splitlines()[0] == "z_m,y_over_D,p_bar,p_kNm"
    assert "<polyline" in Path(files[1]).read_text()


def test_explain(capsys, workspace, trained):
    code, out, _ = run_cli(capsys, "explain", "--config", str(workspace / "cfg.json"), "--model", str(trained),
                           "--out", str(workspace / "shap"))
    assert code == 0 and (workspace / "shap" / "importance.json").exists()


def test_solve_baseline_zero_sweep(capsys, workspace):
    code, out, _ = run_cli(capsys, "solve", "--config", str(workspace / "cfg.json"), "--case", "S01",
                           "--springs", "baseline", "--out", str(workspace / "solve"))
    assert code == 0
    sweep = Path(json.loads(out)["files"][0]).read_text().splitlines()
    assert sweep == ["H_kN,y_head_m", "0.0,0.0"]


def test_solve_model_requires_model(capsys, workspace):
    code, _, err = run_cli(capsys, "solve", "--config", str(workspace / "cfg.json"), "--case", "S01",
                           "--springs", "model", "--out", str(workspace / "solve2"))
    assert code == 1 and json.loads(err)["stage"] == "gbt_engine"


def test_error_line_is_json(capsys, workspace, trained):
    code, _, err = run_cli(capsys, "predict", "--config", str(workspace / "cfg.json"), "--model", str(trained),
                           "--case", "missing", "--zd", "2")
    assert code == 1
    payload = json.loads(err.strip())
    assert payload["stage"] == "dataset" and "missing" in payload["error"]


def test_tune_budget_validation(capsys, workspace):
    code, _, err = run_cli(capsys, "tune", "--config", str(workspace / "cfg.json"), "--budget", "0")
    assert code == 1 and json.loads(err)["stage"] == "bayes_tuner"


def test_run_and_report(capsys, workspace):
    code, out, _ = run_cli(capsys, "run", "--config", str(workspace / "cfg.json"), "--out", str(workspace / "runs"),
                           "--split", "curve", "--seed", "2")
    assert code == 0
    run_dir = json.loads(out)["run_dir"]
    code, out, _ = run_cli(capsys, "report", "--out", run_dir)
    assert code == 0 and Path(json.loads(out)["files"][0]).name == "index.md"
    code, _, err = run_cli(capsys, "report", "--out", str(workspace / "nowhere"))
    assert code == 1
