import io
import json
import math
import subprocess
import sys

import pytest

from frgd.cli import main


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


def test_models_lists_bundles():
    code, text = run("models")
    assert code == 0 and "sg" in text.split() and "windmill" in text.split()


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["resist", "sg"], ["resist", "sg", "--level", "1",
                                                                            "--from", "0", "--to", "1,0"]])
def test_usage_errors_exit_2(argv):
    assert run(*argv)[0] == 2


def test_missing_model_exits_2():
    assert run("validate", "no_such_model")[0] == 2


@pytest.mark.parametrize("name", ["sg", "vicsek_overlap", "sg_open", "golden_sg"])
def test_validate(name):
    code, text = run("validate", name)
    assert code == 0 and text.startswith("valid")


def test_validate_reports_bad_boundary(tmp_path):
    from frgd.modelfile import model_text
    d = json.loads(model_text("sg"))
    d["boundary"]["K"][2] = [0.5, 0.8]
    d.pop("harmonic"), d.pop("parameters")
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    code, text = run("validate", str(p))
    assert code == 1 and text.startswith("invalid")


def test_delta_sg():
    code, text = run("delta", "sg")
    assert code == 0 and abs(float(text) - math.log(3) / math.log(5)) < 1e-9


def test_verify():
    code, text = run("verify", "sg_open")
    assert code == 0 and "regular = true" in text and text.strip().endswith("ok")


def test_resist_sg_level1():
    code, text = run("resist", "sg", "--level", "2", "--from", "0,0", "--to", "1,0")
    assert code == 0 and abs(float(text) - 2 / 3) < 1e-9


def test_resist_unknown_vertex():
    assert run("resist", "sg", "--level", "1", "--from", "0.3,0.3", "--to", "1,0")[0] == 1


def test_spectrum_csv(tmp_path):
    p = tmp_path / "ev.csv"
    code, text = run("spectrum", "sg", "--level", "3", "--bc", "neumann", "--out", str(p))
    rows = p.read_text().splitlines()
    assert code == 0 and rows[0] == "index,eigenvalue"
    vals = [float(r.split(",")[1]) for r in rows[1:]]
    assert len(vals) == 42 and vals == sorted(vals) and abs(vals[0]) < 1e-9
    assert "eigenvalues = 42" in text


def test_overlap_json():
    code, text = run("overlap", "sg", "--depth", "2", "--json")
    doc = json.loads(text)
    assert code == 0 and doc[0]["verdict"] == "finite-evidence"


def test_overlap_propose_text():
    code, text = run("overlap", "sg", "--depth", "2", "--propose", "0.5", "0.25")
    assert code == 0 and "1 island types" in text


def test_render_is_deterministic(tmp_path):
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    assert run("render", "sg", "--depth", "2", "-o", str(a))[0] == 0
    assert run("render", "sg", "--depth", "2", "-o", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "frgd", "delta", "interval"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0 and abs(float(r.stdout) - 0.5) < 1e-9


@pytest.mark.slow
def test_solve_windmill():
    code, text = run("solve", "windmill")
    vals = dict(line.split(" = ") for line in text.splitlines() if " = " in line)
    assert code == 0 and text.startswith("converged: true")
    assert abs(float(vals["r"]) - 0.25) < 1e-6
    assert abs(float(vals["b"]) - (13 + math.sqrt(73)) / 16) < 1e-6


def test_verify_without_closed_form_exits_1():
    code, text = run("verify", "sg_closed")
    assert code == 1 and "use solve" in text
