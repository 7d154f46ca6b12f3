import json

import pytest
import yaml

from lipext.cli import main


def _write(tmp_path, data, name="exp.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def test_mesh_info_builtin(capsys):
    assert main(["mesh-info", "cube-surface", "--resolution", "1"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["k"] == 2 and info["measure"] == pytest.approx(6.0)


def test_mesh_info_needs_resolution(capsys):
    assert main(["mesh-info", "icosphere"]) == 2
    assert "--resolution" in capsys.readouterr().err


def test_run_writes_report(tmp_path, capsys):
    cfg = _write(tmp_path, {"study": "charts", "mesh": {"builtin": "square-boundary", "resolution": 4},
                            "s": [0.5]})
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out), "--deterministic"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert {"charts.csv", "schema.json", "summary.txt"} <= {p.name for p in out.iterdir()}


def test_run_default_output_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("LIPEXT_OUT", str(tmp_path / "env"))
    cfg = _write(tmp_path, {"study": "norms", "mesh": {"builtin": "circle-polygon", "resolution": 16},
                            "s": 0.5}, name="named.yaml")
    assert main(["run", str(cfg)]) == 0
    assert (tmp_path / "env" / "named" / "norms.csv").exists()


def test_config_error_exit_code_and_message(tmp_path, capsys):
    cfg = _write(tmp_path, {"study": "norms", "mesh": {"builtin": "circle-polygon", "resolution": 16}})
    assert main(["run", str(cfg)]) == 2
    assert "config field 's': missing required key" in capsys.readouterr().err


def test_missing_mesh_file_is_reported(tmp_path, capsys):
    cfg = _write(tmp_path, {"study": "norms", "mesh": {"path": str(tmp_path / "none.obj")}, "s": 0.5})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "error:" in capsys.readouterr().err


def test_oracle_bootstraps_a_fixture_file(tmp_path, capsys):
    fx = tmp_path / "fx.json"
    assert main(["oracle", "--fixtures", str(fx), "--group", "charts"]) == 0
    assert json.loads(fx.read_text())
    assert "reference values within tolerance" in capsys.readouterr().out
