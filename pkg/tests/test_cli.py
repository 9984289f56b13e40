import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from hamperturb.casebook import case_manifest
from hamperturb.cli import main

GOLDEN = Path(__file__).parent / "golden"
WATERWAVE = str(case_manifest("waterwave"))
SYNTHETIC = str(case_manifest("synthetic_pass"))

BASE = """schema_version = 1
variables = ["r", "v"]
eta = [[0, 1], [1, 0]]
h0 = "-(1/2)*r*v^2 - (1/2)*r^2"
assumptions = ["r > 0"]
"""


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def write(tmp_path, text, name="case.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# ---- exit codes -------------------------------------------------------------

def test_check_waterwave_second_stage_fails(capsys):
    code, out, _ = run(["check", WATERWAVE, "--stage", "second"], capsys)
    assert code == 1
    rep = json.loads(out)
    assert rep["verdict"] == "fail" and rep["exit_code"] == 1
    witness = rep["stages"]["second"]["witness"]
    assert witness["name"] == "c_1 = -d_11/lambda_1,1 independent of R2"
    assert "R2" in witness["expression"]


def test_check_synthetic_passes(capsys):
    code, out, _ = run(["check", SYNTHETIC, "--stage", "all"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert all(s["verdict"] in ("pass", "vacuous") for s in rep["stages"].values())


def test_non_symmetric_eta_is_input_error(tmp_path, capsys):
    path = write(tmp_path, BASE.replace("[[0, 1], [1, 0]]", "[[0, 1], [2, 0]]"))
    code, out, err = run(["check", path], capsys)
    assert code == 2 and out == "" and "not symmetric" in err


def test_trivialize_waterwave_fails(capsys):
    code, out, _ = run(["trivialize", WATERWAVE], capsys)
    assert code == 1
    assert json.loads(out)["stages"]["K1"]["verdict"] == "skipped"


def test_trivialize_synthetic_renders_logs(capsys):
    code, out, _ = run(["trivialize", SYNTHETIC], capsys)
    assert code == 0
    rep = json.loads(out)
    assert "log(" in rep["stages"]["K1"]["K1"]
    assert rep["stages"]["k0"]["verdict"] == "pass"


def test_trivialize_zero_perturbation(tmp_path, capsys):
    code, out, _ = run(["trivialize", write(tmp_path, BASE)], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["stages"]["k0"]["k0"] == "0"
    assert rep["stages"]["K1"]["K1"] == "0"


def test_basis_insufficient_exit_code(tmp_path, capsys):
    text = BASE + 'h1 = "3*r^2*v*v_x + r^3*r_x"\n[bases]\nk0 = ["r", "v"]\n'
    code, out, _ = run(["trivialize", write(tmp_path, text)], capsys)
    assert code == 3
    assert json.loads(out)["stages"]["k0"]["verdict"] == "basis-insufficient"


def test_extend_examples(capsys):
    code, out, _ = run(["extend", WATERWAVE, "--f0", "r*v"], capsys)
    assert code == 0
    item = json.loads(out)["stages"]["extension"]["items"][0]
    assert item["verdict"] == "pass" and "F2" in item
    code, out, _ = run(["extend", WATERWAVE, "--f0", "(1/2)*v^2 + r*log(r)"], capsys)
    assert code == 1
    code, out, err = run(["extend", WATERWAVE, "--f0", "r^2*v"], capsys)
    assert code == 2 and "NotConservedError" in err


def test_extend_census_by_basis_name(capsys):
    code, out, _ = run(["extend", WATERWAVE, "--f0", "claws"], capsys)
    rep = json.loads(out)
    assert code == 1
    assert rep["stages"]["census"]["count"] == 5
    assert rep["stages"]["extension"]["pass_vector"] == ["pass", "pass", "pass", "pass", "fail"]


def test_extend_require_generic(capsys):
    code, _, err = run(["extend", WATERWAVE, "--f0", "r*v", "--require-generic"], capsys)
    assert code == 2 and "NonGenericDensityError" in err


def test_case_run(capsys):
    code, out, _ = run(["case", "run", "synthetic", "--seed", "1", "--format", "summary"], capsys)
    assert code == 0 and "PASS" in out


def test_parse_error_in_f0(capsys):
    code, _, err = run(["extend", WATERWAVE, "--f0", "r +"], capsys)
    assert code == 2 and "column" in err


# ---- stage composition --------------------------------------------------------

def test_stage_all_is_conjunction_of_stages(capsys):
    sections = {}
    for stage in ("hydro", "first", "second"):
        _, out, _ = run(["check", WATERWAVE, "--stage", stage], capsys)
        sections.update(json.loads(out)["stages"])
    code, out, _ = run(["check", WATERWAVE, "--stage", "all"], capsys)
    full = json.loads(out)["stages"]
    assert {k: v["verdict"] for k, v in full.items()} == {k: v["verdict"] for k, v in sections.items()}
    assert code == (0 if all(v["verdict"] in ("pass", "vacuous") for v in full.values()) else 1)


# ---- reproducibility ----------------------------------------------------------

def test_golden_case_report(tmp_path, capsys):
    out = tmp_path / "case.json"
    assert main(["case", "run", "waterwave", "--out", str(out)]) == 0
    assert out.read_bytes() == (GOLDEN / "waterwave_case.json").read_bytes()


def test_golden_check_report(tmp_path):
    out = tmp_path / "check.json"
    assert main(["check", WATERWAVE, "--out", str(out)]) == 1
    assert out.read_bytes() == (GOLDEN / "waterwave_check.json").read_bytes()


def test_timing_only_on_request(capsys):
    _, out, _ = run(["check", WATERWAVE, "--stage", "hydro"], capsys)
    assert "timing" not in json.loads(out)
    _, out, _ = run(["check", WATERWAVE, "--stage", "hydro", "--timing"], capsys)
    assert "hydro" in json.loads(out)["timing"]


def test_seed_override_is_recorded(capsys):
    _, out, _ = run(["check", WATERWAVE, "--stage", "hydro", "--seed", "5"], capsys)
    assert json.loads(out)["seed"] == 5


@pytest.mark.skipif(shutil.which("hamperturb") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["hamperturb", "check", WATERWAVE, "--stage", "hydro", "--format", "summary"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert proc.stdout.startswith("check waterwave: PASS")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hamperturb.cli", "--help"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0 and "trivialize" in proc.stdout
