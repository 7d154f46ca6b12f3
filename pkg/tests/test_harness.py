import json

import numpy as np
import pytest
import yaml

from lipext.harness import (
    COLUMNS,
    ConfigError,
    ExperimentConfig,
    Invariant,
    OracleRow,
    StudyError,
    builtin_mesh,
    emit_report,
    field_function,
    oracle_suite,
    ratio_family,
    ratio_slopes,
    run,
    run_study,
)
from lipext.geometry import measure
from lipext.meshes import circle_polygon
from lipext.quadrature import QuadratureSpec

BASE = {"study": "norms", "mesh": {"builtin": "circle-polygon", "resolution": 32}, "s": [0.5]}


def cfg(**over):
    return ExperimentConfig.from_dict(dict(BASE, **over))


@pytest.mark.parametrize("bad,field", [
    ({"study": "nope"}, "study"),
    ({"s": [1.5]}, "s"),
    ({"s": "half"}, "s"),
    ({"p": 0.5}, "p"),
    ({"fields": ["x", "unknown"]}, "fields"),
    ({"mesh": {"builtin": "torus", "resolution": 3}}, "mesh.builtin"),
    ({"mesh": {"builtin": "circle-polygon", "resolution": 2}}, "mesh.resolution"),
    ({"mesh": {"builtin": "circle-polygon", "resolution": 8, "colour": 1}}, "mesh.colour"),
    ({"quadrature": {"far_order": 1}}, "quadrature"),
    ({"quadrature": {"speed": 3}}, "quadrature"),
    ({"region": {"kind": "blob"}}, "region.kind"),
    ({"region": {"kind": "arc", "angles": [7.0]}}, "region.angles"),
    ({"region": {"kind": "cap", "center": [0, 0], "radii": [1]}}, "region.center"),
    ({"lambdas": [1.0, -2.0]}, "lambdas"),
    ({"rho": 2.0}, "rho"),
    ({"collars": [1.5]}, "collars"),
    ({"levels": -1}, "levels"),
    ({"deterministic": "yes"}, "deterministic"),
    ({"colour": 1}, "colour"),
])
def test_config_errors_name_the_field(bad, field):
    with pytest.raises(ConfigError) as info:
        cfg(**bad)
    assert info.value.field == field
    assert f"'{field}'" in str(info.value)


@pytest.mark.parametrize("key", ["study", "mesh", "s"])
def test_missing_required_keys(key):
    d = dict(BASE)
    del d[key]
    with pytest.raises(ConfigError, match="missing required key"):
        ExperimentConfig.from_dict(d)


def test_study_specific_region_requirements():
    with pytest.raises(ConfigError, match="arc or cap"):
        cfg(study="lemma-checks")
    with pytest.raises(ConfigError, match="two region sizes"):
        cfg(study="ratio-study", region={"kind": "arc", "angles": [1.0]})


def test_load_from_yaml(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(dict(BASE, fields=["x", "wave"])))
    c = ExperimentConfig.load(path)
    assert c.name == "exp" and c.fields == ("x", "wave")
    path.write_text("study: [unclosed\n")
    with pytest.raises(ConfigError, match="YAML"):
        ExperimentConfig.load(path)


def test_dyadic_arc_sizes():
    c = cfg(region={"kind": "arc", "center": 1.0, "dyadic": [1, 2]}, study="lemma-checks")
    assert c.region.sizes == pytest.approx((np.pi, np.pi / 2))


def test_builtin_meshes_and_fields():
    assert builtin_mesh("cube-surface", 0).n_simplices == 12
    with pytest.raises(ValueError):
        builtin_mesh("circle-polygon", 2)
    P = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(field_function("x")(P), [1.0, 0.0])
    assert np.allclose(field_function("one")(P), 1.0)
    with pytest.raises(ValueError, match="unknown field"):
        field_function("nope")


def test_emit_report_refuses_empty(tmp_path):
    with pytest.raises(ValueError, match="no records"):
        emit_report([], tmp_path)


def test_emit_report_files_and_schema(tmp_path):
    rows = [{"s": 0.5, "lp": 1.0, "holds": True, "custom": "a"}]
    inv = [Invariant("soft one", False, "detail", hard=False), Invariant("hard one", True)]
    paths = emit_report(rows, tmp_path, "t", invariants=inv, meta={"study": "x"})
    names = sorted(p.name for p in paths)
    assert names == ["schema.json", "summary.txt", "t.csv"]
    schema = json.loads((tmp_path / "schema.json").read_text())
    assert schema["t"]["s"] == COLUMNS["s"] and schema["t"]["custom"] == ""
    text = (tmp_path / "summary.txt").read_text()
    assert "[WARN] soft one: detail" in text and "[PASS] hard one" in text
    assert "status: PASS" in text and "generated" not in text
    assert (tmp_path / "t.csv").read_text().splitlines()[1] == "0.5,1.0,true,a"


def test_nondeterministic_report_has_timestamp(tmp_path):
    emit_report([{"a": 1}], tmp_path, deterministic=False, elapsed=1.5)
    assert "generated:" in (tmp_path / "summary.txt").read_text()


def test_every_study_column_is_documented(tmp_path):
    for study, extra in (("norms", {}), ("charts", {}),
                         ("lemma-checks", {"region": {"kind": "arc", "center": 1.0, "dyadic": [1]}})):
        res = run_study(cfg(study=study, fields=["x"], **extra))
        for table, rows in [(res.table, res.rows)] + list(res.extra.items()):
            for r in rows:
                missing = [c for c in r if c not in COLUMNS]
                assert not missing, (study, table, missing)


def test_norms_run_passes_and_uses_env_output(tmp_path, monkeypatch):
    monkeypatch.setenv("LIPEXT_OUT", str(tmp_path))
    assert run(cfg(fields=["x", "one"]), deterministic=True) == 0
    out = tmp_path / "run"
    assert (out / "norms.csv").exists()
    assert "status: PASS" in (out / "summary.txt").read_text()


def test_geometry_failures_become_study_errors():
    c = cfg(mesh={"path": "/nonexistent/mesh.obj"})
    with pytest.raises(StudyError, match="building geometry"):
        run_study(c)


def test_ratio_family_spans_dyadic_measures():
    m = circle_polygon(64)
    regs = ratio_family(m, dyadic=(2, 4))
    ratios = [measure(r) / m.total_measure for r in regs]
    assert ratios == pytest.approx([0.25, 0.0625], rel=1e-2)


def test_ratio_slopes_recover_power_law():
    rows = [{"field": "x", "s": 0.5, "collar": 0.25, "measure": a, "R": 2 * a ** 0.1} for a in (0.01, 0.1, 1.0)]
    (r,) = ratio_slopes(rows, "R")
    assert r["slope"] == pytest.approx(0.1) and r["decades"] == pytest.approx(2.0)


def test_oracle_row_tolerance_modes():
    assert OracleRow("a", 1.0, 1.01, 0.02, "rel", "compared").passed
    assert not OracleRow("a", 1.0, 1.05, 0.02, "rel", "compared").passed
    assert OracleRow("a", -0.1, -0.11, 0.02, "abs", "compared").passed
    assert not OracleRow("a", 1.0, float("nan"), 0.02, "rel", "compared").passed


def test_oracle_bootstrap_and_compare(tmp_path):
    path = tmp_path / "fx.json"
    rows = oracle_suite(path, groups=("charts",))
    assert rows and all(r.status == "written" and r.passed for r in rows)
    data = json.loads(path.read_text())
    assert all(k.startswith("chart/") for k in data)
    rows = oracle_suite(path, groups=("charts",))
    assert all(r.status == "compared" and r.passed for r in rows)
    # a corrupted reference is reported, not silently overwritten
    key = next(iter(data))
    data[key]["value"] *= 1.5
    path.write_text(json.dumps(data))
    rows = oracle_suite(path, groups=("charts",))
    assert [r.key for r in rows if not r.passed] == [key]


def test_lowered_quadrature_drifts_from_the_oracle(derived):
    # the frozen references resolve the gap between the default and a crude rule,
    # and the crude rule's own error estimate widens accordingly
    from lipext.sobolev import ScalarField, SobolevParams, gagliardo_seminorms
    m = builtin_mesh("circle-polygon", 64)
    u = ScalarField.from_function(m, field_function("wave"))
    prm = SobolevParams(0.75, 2.0)
    ref = derived["seminorm/circle-polygon(64)/wave/s=0.75/p=2"]["value"]
    good = gagliardo_seminorms([u], params=prm)[0]
    crude = gagliardo_seminorms([u], params=prm, quad=QuadratureSpec(far_order=2, near_refinement=2,
                                                                   separation_ratio=1.0))[0]
    dev_good = abs(good.power - ref) / ref
    dev_crude = abs(crude.power - ref) / ref
    assert dev_good < 1e-4
    assert dev_crude > 5 * dev_good
    assert crude.error > good.error
