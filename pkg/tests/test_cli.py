"""Command-line interface: exit codes, output files, determinism and the JSON schema."""

import json
import sys

import jsonschema
import pytest

from dirac_aa.cli import main
from dirac_aa.report import REPORT_SCHEMA
from dirac_aa.scenario import ScenarioError, bundled_names, load_scenario, parse_scenario

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

NONCOMPACT = """
format = 1
name = "line"
[chart]
coords = ["x", "y"]
[structure]
kind = "presymplectic"
omega = { "x y" = "1" }
[system]
X = [["1", "0"]]
F = ["y"]
H = ["y"]
[torus]
seed = [0.0, 0.5]
t_max = 4.0
transversal = ["y"]
"""


def run(tmp_path, *argv):
    out = tmp_path / "out"
    code = main(list(argv) + ["--out", str(out)])
    return code, out


def test_list(capsys):
    assert main(["list"]) == 0
    names = capsys.readouterr().out.split()
    assert "oscillator" in names and names == bundled_names()


def test_pass_exit_code_and_files(tmp_path):
    code, out = run(tmp_path, "find-torus", "oscillator")
    assert code == 0
    rep = tomllib.loads((out / "report.toml").read_text())
    assert rep["status"] == "pass" and rep["command"] == "find-torus"
    assert (out / "torus_points.csv").exists() and (out / "plotdata" / "torus_points.dat").exists()
    assert (out / "timings.txt").read_text().startswith("find-torus ")


def test_negative_control_exit_code(tmp_path):
    code, out = run(tmp_path, "check-dirac", "nonclosed")
    assert code == 1
    rep = tomllib.loads((out / "report.toml").read_text())
    clos = next(c for c in rep["check"] if c["name"] == "courant_closedness")
    assert clos["status"] == "fail" and clos["residual"] >= 0.05


def test_missing_scenario_exit_code(tmp_path):
    code, _ = run(tmp_path, "check-dirac", str(tmp_path / "nope.toml"))
    assert code == 2


def test_bad_toml_exit_code(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("format = 1\n[chart\n")
    assert run(tmp_path, "check-dirac", str(bad))[0] == 2


def test_missing_block_exit_code(tmp_path):
    assert run(tmp_path, "find-torus", "canonical")[0] == 2


def test_numeric_error_exit_code(tmp_path):
    f = tmp_path / "line.toml"
    f.write_text(NONCOMPACT)
    code, out = run(tmp_path, "find-torus", str(f))
    assert code == 3
    rep = tomllib.loads((out / "report.toml").read_text())
    assert rep["status"] == "error" and "NonCompactError" in rep["error"]


def test_bad_options_exit_code(tmp_path):
    assert run(tmp_path, "check-dirac", "oscillator", "--tol-scale", "0")[0] == 2


def test_reports_are_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["find-torus", "t2xr", "--out", str(a)]) == 0
    assert main(["find-torus", "t2xr", "--out", str(b)]) == 0
    for name in ("report.toml", "torus_points.csv", "plotdata/torus_points.dat"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_json_report_validates(tmp_path):
    code, out = run(tmp_path, "check-system", "nonhamiltonian", "--json")
    assert code == 1
    doc = json.loads((out / "report.json").read_text())
    jsonschema.validate(doc, REPORT_SCHEMA)
    iso = next(c for c in doc["check"] if c["name"] == "torus_isotropy")
    assert iso["status"] == "fail"


def test_tol_scale_loosens_thresholds(tmp_path):
    code, out = run(tmp_path, "check-dirac", "nonclosed", "--tol-scale", "1e12")
    assert code == 0


@pytest.mark.parametrize("doc, msg", [
    ({"format": 2}, "format"),
    ({"format": 1, "structure": {"kind": "weird"}, "chart": {"coords": ["x"]}}, "kind"),
    ({"format": 1, "bogus": 1, "structure": {"kind": "canonical", "p": 1}}, "unknown"),
    ({"format": 1, "chart": {"coords": ["x", "y"]}, "structure": {"kind": "presymplectic", "omega": {"x": "1"}}},
     "degree"),
])
def test_scenario_validation(doc, msg):
    with pytest.raises(ScenarioError, match=msg):
        parse_scenario(doc)


def test_all_bundled_scenarios_load():
    for name in bundled_names():
        assert load_scenario(name).name == name
