import json

import pytest

from pded.cli import main
from test_pipeline import TINY


def test_simulate(tmp_path, capsys):
    assert main(["simulate", "--equation", "burgers", "--sigma", "1.0", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert (tmp_path / "burgers_sigma1.csv").exists()
    assert "residual check" in out


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["simulate", "--equation", "kdv", "--out", "x"]) == 2
    assert main(["discover", "--out", "x", "--set", "search.nope=1"]) == 2


def test_missing_data_is_runtime_error(tmp_path):
    assert main(["discover", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "r")]) == 1


@pytest.fixture(scope="module")
def discovered(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "d.csv"
    assert main(["simulate", "--equation", "burgers", "--sigma", "0.1", "--out", str(data)]) == 0
    cfg = root / "c.json"
    cfg.write_text(json.dumps({"search": {"iterations": 2}}))
    args = ["discover", "--config", str(cfg), "--data", str(data), "--out", str(root / "r"), "--seed", "1", "--rounds", "1"]
    for s in TINY:
        args += ["--set", s]
    assert main(args) == 0
    return root / "r"


def test_discover_outputs(discovered):
    rep = json.loads((discovered / "report.json").read_text())
    assert rep["seed"] == 1 and len(rep["rounds"]) == 1
    assert rep["config"]["search"]["iterations"] == 2
    assert (discovered / "rewards.png").exists()


def test_score(discovered, capsys):
    assert main(["score", "--report", str(discovered / "report.json"), "--truth", "u_t = -1*u*u_x + 0.1*u_xx"]) == 0
    out = capsys.readouterr().out
    for key in ("E =", "E2 =", "TPR =", "L2 ="):
        assert key in out


def test_report(discovered, tmp_path, capsys):
    assert main(["report", "--report", str(discovered / "report.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "rewards.png").exists()
    assert "votes" in capsys.readouterr().out
