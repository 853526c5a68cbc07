import csv
import json

import numpy as np
import pytest

from mprnet.cli import main
from mprnet.data import write_csv

SINE = ["--dataset", "builtin:sine", "--history-len", "48", "--horizon", "24", "--layers", "2"]


def run(args, tmp):
    return main(list(args) + ["--out", str(tmp)])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert run(["train", *SINE, "--epochs", "6", "--seed", "0"], out) == 0
    return out


def test_train_writes_three_files(trained):
    assert sorted(p.name for p in trained.iterdir()) == ["checkpoint.bin", "config.json", "history.jsonl"]
    history = [json.loads(line) for line in (trained / "history.jsonl").read_text().splitlines()]
    assert [h["epoch"] for h in history] == list(range(1, 7))
    assert json.loads((trained / "config.json").read_text())["history_len"] == 48


def test_missing_dataset_path(tmp_path, capsys):
    missing = tmp_path / "absent.csv"
    assert run(["train", "--dataset", str(missing)], tmp_path / "o") == 2
    assert str(missing) in capsys.readouterr().err


def test_same_seed_byte_identical(tmp_path):
    args = ["train", *SINE, "--epochs", "2", "--seed", "7"]
    assert run(args, tmp_path / "a") == 0
    assert run(args, tmp_path / "b") == 0
    for name in ("history.jsonl", "checkpoint.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_eval_on_trained_sine(trained, tmp_path):
    out = tmp_path / "eval"
    assert run(["eval", *SINE, "--checkpoint", str(trained / "checkpoint.bin")], out) == 0
    report = json.loads((out / "metrics.json").read_text())
    assert report["mse"] < 0.01
    with open(out / "forecasts.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["window_id", "step", "channel", "y_true", "y_pred"]
    assert len(rows) - 1 == report["windows"] * 24


def test_forecast_command(trained, tmp_path):
    out = tmp_path / "fc"
    assert run(["forecast", *SINE, "--checkpoint", str(trained / "checkpoint.bin")], out) == 0
    with open(out / "forecast.csv") as fh:
        assert len(list(csv.reader(fh))) == 1 + 24


def test_checkpoint_from_other_channel_count(trained, tmp_path, capsys):
    t = np.arange(400)
    data = np.stack([np.sin(t / 4), np.cos(t / 4)], axis=1)
    write_csv(tmp_path / "two.csv", data, ["a", "b"])
    code = run(["eval", "--dataset", str(tmp_path / "two.csv"), "--history-len", "48", "--horizon", "24",
                "--layers", "2", "--checkpoint", str(trained / "checkpoint.bin")], tmp_path / "o")
    err = capsys.readouterr().err
    assert code == 1
    assert "ShapeMismatch" in err and len(err.strip().splitlines()) == 1


def test_probe_emits_three_rows(tmp_path):
    out = tmp_path / "probe"
    assert run(["probe", "--history-len", "96", "--horizon", "24", "--layers", "1"], out) == 0
    with open(out / "scaling.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["history_len"]) for r in rows] == [96, 192, 384]


@pytest.mark.slow
def test_ablate_four_reports_and_ordering(tmp_path):
    # one ablate run of the sine fixture at the default seed
    cfg = tmp_path / "abl.json"
    cfg.write_text(json.dumps({"dataset": "builtin:sine", "standardize": False, "history_len": 96,
                               "horizon": 24, "layers": 2, "query_len": 24, "epochs": 10}))
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(cfg), "--out", str(out)]) == 0
    reports = {p.stem.split("_", 1)[1]: json.loads(p.read_text()) for p in out.glob("metrics_*.json")}
    assert sorted(reports) == ["both", "fc_forecaster", "full", "no_multivariate"]
    assert reports["both"]["mse"] >= reports["full"]["mse"]


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": "builtin:sine", "history_len": 48, "horizon": 24,
                               "epochs": 5, "max_batches": 2}))
    out = tmp_path / "o"
    assert main(["train", "--config", str(cfg), "--epochs", "1", "--out", str(out)]) == 0
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["epochs"] == 1 and resolved["max_batches"] == 2


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": "builtin:sine", "learning_rate": 0.1}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_invalid_model_setting(tmp_path):
    assert run(["train", "--dataset", "builtin:sine", "--layers", "0"], tmp_path) == 2


def test_unknown_command():
    assert main(["fly"]) == 2
