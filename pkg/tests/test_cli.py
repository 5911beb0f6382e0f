import csv
import json

import pytest

from epslab.cli import lab_threads, main
from epslab.config import ConfigError


def write(tmp_path, obj, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def report(out):
    return json.loads((out / "report.json").read_text())


def test_approximate_constant(tmp_path):
    cfg = write(tmp_path, {"field": {"name": "constant", "params": {"c": 0.3}}, "max_depth": 4})
    out = tmp_path / "o"
    assert main(["approximate", "--config", cfg, "--out", str(out)]) == 0
    rep = report(out)
    assert rep["schema_version"] == "1" and rep["passed"] is True
    run = rep["results"]["runs"][0]
    assert run["sup_error"] == 0
    assert all(run["carleson"][k]["value"] == 0
               for k in ("mu1_phi1_jumps", "mu2_grad_u_red", "mu3_red_jumps"))
    assert (out / "forest.json").exists()


def test_goodlambda_decay_table(tmp_path):
    cfg = write(tmp_path, {"goodlambda": {"depth": 8}, "seed": 7})
    out = tmp_path / "o"
    assert main(["goodlambda", "--config", cfg, "--out", str(out)]) == 0
    with open(out / "tables" / "decay.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["m"] for r in rows] == ["1", "2", "3", "4"]


def test_classify_paraboloid(tmp_path):
    cfg = write(tmp_path, {"field": {"name": "paraboloid"}})
    out = tmp_path / "o"
    assert main(["classify", "--config", cfg, "--out", str(out)]) == 0
    res = report(out)["results"]["report"]
    assert res["prop31"] is True and res["sharp"] is False
    assert res["theta_sup"] == pytest.approx(1.0, abs=0.01)


def test_empty_sweep_header_only(tmp_path):
    cfg = write(tmp_path, {"epsilons": []})
    out = tmp_path / "o"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    text = (out / "tables" / "sweep.csv").read_text()
    assert text.count("\n") == 1 and text.startswith("epsilon,")


def test_two_eps_sweep(tmp_path):
    cfg = write(tmp_path, {"epsilons": [0.2, 0.1], "max_depth": 6})
    out = tmp_path / "o"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    with open(out / "tables" / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["epsilon"]) for r in rows] == [0.2, 0.1]


def test_rerun_byte_identical(tmp_path, monkeypatch):
    cfg = write(tmp_path, {"epsilons": [0.1, 0.2], "max_depth": 6})
    a, b = tmp_path / "a", tmp_path / "b"
    monkeypatch.setenv("LAB_THREADS", "1")
    assert main(["approximate", "--config", cfg, "--out", str(a)]) == 0
    monkeypatch.setenv("LAB_THREADS", "3")
    assert main(["approximate", "--config", cfg, "--out", str(b)]) == 0
    for name in ("forest.json", "grids/approximant_0.f64", "grids/approximant_1.f64"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ra, rb = report(a), report(b)
    ra["config"]["out"] = rb["config"]["out"] = None
    assert ra == rb


def test_rerun_report_bytes(tmp_path):
    cfg = write(tmp_path, {"goodlambda": {"depth": 6}, "seed": 3, "out": str(tmp_path / "o")})
    assert main(["goodlambda", "--config", cfg]) == 0
    first = (tmp_path / "o" / "report.json").read_bytes()
    assert main(["goodlambda", "--config", cfg]) == 0
    assert (tmp_path / "o" / "report.json").read_bytes() == first


def test_exit_gate_failure(tmp_path):
    # two levels cannot resolve a 0.01 threshold
    cfg = write(tmp_path, {"epsilons": [0.01], "max_depth": 2})
    out = tmp_path / "o"
    assert main(["approximate", "--config", cfg, "--out", str(out)]) == 1
    rep = report(out)
    assert rep["passed"] is False and rep["gates"]["unresolved_cells_below_1pct[eps=0.01]"] is False


def test_exit_config_error(tmp_path, capsys):
    cfg = write(tmp_path, {"beta": 1.2})
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "beta" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_exit_io_missing_config(tmp_path):
    assert main(["verify", "--config", str(tmp_path / "missing.json")]) == 3


def test_exit_io_unwritable_out(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write(tmp_path, {"field": {"name": "constant"}, "max_depth": 2})
    assert main(["classify", "--config", cfg, "--out", str(blocker / "sub")]) == 3


def test_depth_and_seed_overrides(tmp_path):
    cfg = write(tmp_path, {"max_depth": 6, "field": {"name": "constant"}})
    out = tmp_path / "o"
    assert main(["approximate", "--config", cfg, "--out", str(out), "--depth", "3", "--seed", "5"]) == 0
    c = report(out)["config"]
    assert c["max_depth"] == 3 and c["seed"] == 5


def test_lab_threads(monkeypatch):
    monkeypatch.setenv("LAB_THREADS", "2")
    assert lab_threads() == 2
    monkeypatch.setenv("LAB_THREADS", "zero")
    with pytest.raises(ConfigError):
        lab_threads()
