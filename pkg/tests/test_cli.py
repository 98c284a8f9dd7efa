import csv
import json

import numpy as np
import pytest

from riskpart import simulation as sim
from riskpart.cli import main
from riskpart.data import SurvivalDataset, write_csv
from riskpart.partition import Clause, PartitionModel, Region


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    train, test = sim.generate(sim.parse_scenario("high-dep-30", n_test=400), 2)
    write_csv(train, d / "train.csv")
    write_csv(test, d / "test.csv")
    write_csv(train.replace(event=np.zeros(train.n, bool)), d / "noevent.csv")
    sub = SurvivalDataset(sim.schema()[:4], test.x[:, :4], test.time, test.event)
    write_csv(sub, d / "missing.csv")
    sim.true_model("high").to_json(d / "truth.json")
    PartitionModel(sim.schema(), (Region((Clause(),), (0.0,), 1.0),)).to_json(d / "root.json")
    return d


def _fit(files, out, *extra):
    return main(["fit", "--data", str(files / "train.csv"), "--out", str(out), *extra])


def test_fit_happy_path(files, tmp_path, capsys):
    assert _fit(files, tmp_path / "o") == 0
    for f in ("model.json", "risk_table.txt", "cv_curve.csv", "km_curves.csv", "config.toml"):
        assert (tmp_path / "o" / f).is_file()
    model = PartitionModel.from_json(tmp_path / "o" / "model.json")
    assert model.size >= 2 and set(model.variables_used()) <= {"W1", "W2", "W3", "W4", "W5"}
    assert "risk group" in capsys.readouterr().out
    with open(tmp_path / "o" / "cv_curve.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["size"]) for r in rows] == list(range(1, len(rows) + 1))


def test_config_rerun_reproduces(files, tmp_path):
    assert _fit(files, tmp_path / "a", "--loss", "brier-5km", "--method", "cart", "--seed", "3") == 0
    cfg = tmp_path / "a" / "config.toml"
    text = cfg.read_text().replace(str(tmp_path / "a"), str(tmp_path / "b"))
    cfg2 = tmp_path / "c.toml"
    cfg2.write_text(text)
    assert main(["fit", "--config", str(cfg2)]) == 0
    for f in ("model.json", "cv_curve.csv", "km_curves.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_unknown_loss_lists_choices(files, tmp_path, capsys):
    assert _fit(files, tmp_path / "o", "--loss", "deviance") == 1
    err = capsys.readouterr().err
    assert "error:" in err and "ipcw-l2" in err and "brier-5km" in err


def test_zero_events(files, tmp_path, capsys):
    assert main(["fit", "--data", str(files / "noevent.csv"), "--out", str(tmp_path / "o")]) == 1
    assert "no subject with event" in capsys.readouterr().err


def test_unknown_config_key(files, tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text('lossy = "x"\n')
    assert main(["fit", "--config", str(cfg), "--data", str(files / "train.csv")]) == 1
    assert "lossy" in capsys.readouterr().err


def test_replicate_reps_zero(tmp_path, capsys):
    assert main(["replicate", "--scenario", "high-dep-30", "--reps", "0", "--out", str(tmp_path)]) == 1
    assert "--reps" in capsys.readouterr().err


def test_replicate_bad_scenario(tmp_path, capsys):
    assert main(["replicate", "--scenario", "mid-dep-30", "--reps", "1", "--out", str(tmp_path)]) == 1


def test_replicate_byte_identical(tmp_path):
    args = ["replicate", "--scenario", "high-indep-30", "--reps", "2", "--n-test", "200",
            "--methods", "partDSA_IPCW,CART_IPCW", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    for f in ("replicates.csv", "aggregate.csv", "size_distribution.csv", "stratification_bands.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_evaluate_with_truth(files, tmp_path, capsys):
    assert main(["evaluate", "--model", str(files / "truth.json"), "--data", str(files / "test.csv"),
                 "--true-model", str(files / "truth.json"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "c_p" in out
    with open(tmp_path / "metrics.csv") as fh:
        row = next(csv.DictReader(fh))
    assert float(row["l_p"]) == 0.0 and float(row["d_p"]) == 1.0
    assert 0.8 < float(row["c_p"]) <= 1.0


def test_evaluate_root_model(files, tmp_path, capsys):
    assert main(["evaluate", "--model", str(files / "root.json"), "--data", str(files / "test.csv"),
                 "--out", str(tmp_path)]) == 0
    cap = capsys.readouterr()
    assert "concordance undefined" in cap.err
    with open(tmp_path / "metrics.csv") as fh:
        row = next(csv.DictReader(fh))
    assert row["c_p"] == "nan" and row["size"] == "1"


def test_evaluate_missing_column(files, tmp_path, capsys):
    assert main(["evaluate", "--model", str(files / "truth.json"), "--data", str(files / "missing.csv"),
                 "--out", str(tmp_path)]) == 1
    assert "W5" in capsys.readouterr().err


def test_evaluate_malformed_model(files, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": []}))
    assert main(["evaluate", "--model", str(bad), "--data", str(files / "test.csv"), "--out", str(tmp_path)]) == 1
    assert "malformed" in capsys.readouterr().err
