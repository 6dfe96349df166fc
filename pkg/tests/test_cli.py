import csv
import json

import numpy as np
import pytest
import yaml

from porompm.cli import main
from porompm.errors import ConfigurationError
from porompm.scenarios import Simulation, resolve_config


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_oracle_case5_csv(tmp_path):
    out = tmp_path / "c5.csv"
    assert main(["oracle", "case5", "theta=0.5", "K=0.1", "drag=darcy", "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["t", "h_ff", "h_fp", "p_i"]
    t = np.array([float(r[0]) for r in rows[1:]])
    p = np.array([float(r[3]) for r in rows[1:]])
    assert p[np.argmin(abs(t - 0.5))] == pytest.approx(-512.642, rel=1e-5)


def test_oracle_case6_header(tmp_path):
    out = tmp_path / "c6.csv"
    assert main(["oracle", "case6", "t_end=1.0", "--out", str(out)]) == 0
    assert _rows(out)[0] == ["t", "h_1", "h_2", "p_i"]


def test_oracle_couette_csv(tmp_path):
    out = tmp_path / "cou.csv"
    assert main(["oracle", "couette", "mu_ratio=1.0", "n=11", "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["y_norm", "v_norm"]
    assert float(rows[1][1]) == pytest.approx(1.0)


def _tiny_cfg():
    return {"scenario": "tiny",
            "grid": {"origin": [0.0], "upper": [0.5], "h": 0.05},
            "fluid_regions": [{"lower": [0.0], "upper": [0.2]}],
            "boundaries": [{"axis": 0, "side": "low", "type": "slip"}],
            "time": {"dt": 1e-3, "t_end": 5e-3}}


def test_simulate_writes_artifacts(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(_tiny_cfg()))
    out = tmp_path / "run"
    assert main(["simulate", str(cfg), "--out", str(out)]) == 0
    for name in ("config.resolved.yaml", "timeseries.csv", "solver_log.jsonl", "summary.json", "particles_final.csv"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "completed" and summary["steps"] == 5
    assert summary["mass_final"] == summary["mass_initial"]
    resolved = yaml.safe_load((out / "config.resolved.yaml").read_text())
    assert resolved["solver"]["type"] == "mixed_vms"
    assert len((out / "solver_log.jsonl").read_text().splitlines()) == 5


def test_zero_gravity_traces_constant():
    cfg = _tiny_cfg()
    cfg["fluid"] = {"gravity": [0.0]}
    sim = Simulation(cfg)
    sim.run()
    ts = sim.timeseries()
    for key in ("y_cm", "v_mean", "mass", "p_max", "v_max"):
        assert np.all(ts[key] == ts[key][0]), key


def test_bad_solver_rejected():
    cfg = _tiny_cfg()
    cfg["solver"] = {"type": "explicit"}
    with pytest.raises(ConfigurationError):
        resolve_config(cfg)


def test_missing_grid_rejected():
    with pytest.raises(ConfigurationError):
        resolve_config({"scenario": "x", "grid": {"origin": [0.0]}})
