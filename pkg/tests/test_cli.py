import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from toruslab.cli import main
from toruslab.errors import ConfigError
from toruslab.pipeline import RunConfig, config_from_dict

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _report(out):
    return json.loads((out / "report.json").read_text())


def test_flat_run_passes(tmp_path):
    assert main(["run", "--config", str(CONFIGS / "flat.json"), "--out", str(tmp_path), "--grid", "8"]) == 0
    rep = _report(tmp_path)
    assert rep["passed"] and all(v["passed"] for v in rep["verdicts"])
    anchors = [v["anchor"] for v in rep["verdicts"]]
    assert len(anchors) == len(set(anchors))
    assert (tmp_path / "sweep.csv").read_text().startswith("eps,rneg_l2,")


def test_sigma10_fails_verdict(tmp_path):
    assert main(["run", "--config", str(CONFIGS / "sigma10.json"), "--out", str(tmp_path), "--grid", "8"]) == 2
    failed = {v["anchor"] for v in _report(tmp_path)["verdicts"] if not v["passed"]}
    assert "u_bounded_fund_domain[u1]" in failed


def test_malformed_json_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"grid": 8,\n  "sigma": }')
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "line 2" in capsys.readouterr().err


def test_missing_config_exits_1(tmp_path):
    assert main(["hodge", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 1


def test_config_validation():
    with pytest.raises(ConfigError, match="sigmaa"):
        config_from_dict({"sigmaa": 1})
    with pytest.raises(ConfigError, match="sweep.eps"):
        config_from_dict({"sweep": {"eps": [0.1, 0.2]}})
    with pytest.raises(ConfigError, match="grid"):
        config_from_dict({"grid": 2})
    with pytest.raises(ConfigError, match="kappa_cap"):
        config_from_dict({"kappa_cap": 0})
    with pytest.raises(ConfigError, match="metric"):
        config_from_dict({"metric": {"kind": "voxel"}})
    with pytest.raises(ConfigError, match="N"):
        config_from_dict({"grid": 8.5})
    cfg = config_from_dict({"grid": 8, "solver": {"tol": 1e-9}, "sweep": {"eps": [0.2, 0.1]}})
    assert cfg == RunConfig(N=8, tol=1e-9, eps=(0.2, 0.1))


def test_lattice_gram_file(tmp_path):
    assert main(["lattice", "--gram", str(CONFIGS / "diag_gram.json"), "--out", str(tmp_path)]) == 0
    rep = _report(tmp_path)["lattice"]
    assert np.allclose(rep["minima"], [np.sqrt(2 / 3), np.sqrt(1.5), np.sqrt(6)])
    assert rep["reduced_basis"] == [[0, 0, 1], [0, 1, 0], [1, 0, 0]]


def test_lattice_gram_bad_shape(tmp_path):
    g = tmp_path / "g.json"
    g.write_text("[[1, 0], [0, 1]]")
    assert main(["lattice", "--gram", str(g), "--out", str(tmp_path)]) == 1


def test_cover_eta(tmp_path):
    assert main(["cover", "--config", str(CONFIGS / "flat.json"), "--eta", "0.1", "--out", str(tmp_path)]) == 0
    assert _report(tmp_path)["cover"]["kappa"] == 8


def test_sweep_rows(tmp_path):
    args = ["sweep", "--config", str(CONFIGS / "conformal_family.json"), "--out", str(tmp_path), "--grid", "8"]
    assert main(args) in (0, 2)
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(lines) == 5
    assert len(_report(tmp_path)["sweep"]["rows"]) == 4


def test_deterministic_report(tmp_path, monkeypatch):
    outs = []
    for i, threads in enumerate(("1", "3")):
        monkeypatch.setenv("TORUSLAB_THREADS", threads)
        out = tmp_path / str(i)
        main(["omega", "--config", str(CONFIGS / "flat.json"), "--out", str(out), "--grid", "8", "--seed", "5"])
        outs.append((out / "report.json").read_bytes())
    assert outs[0] == outs[1]


def test_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("TORUSLAB_THREADS", "many")
    assert main(["hodge", "--out", str(tmp_path)]) == 1


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "toruslab.cli", "hodge", "--out", str(tmp_path), "--grid", "6"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "hodge" in _report(tmp_path)
