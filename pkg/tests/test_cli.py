import json
import subprocess
import sys

import numpy as np
import pytest

from critmorse.cli import main
from critmorse.gallery import GALLERY


def run(args, capsys):
    code = main(args)
    out, err = capsys.readouterr()
    return code, out, err


def _small(name):
    return "17,17" if GALLERY[name].dim == 2 else "9,9,9"


def test_gallery_listing(capsys):
    code, out, _ = run(["gallery"], capsys)
    assert code == 0
    for name in GALLERY:
        assert name in out


def test_verify_quad_saddle_ma_negative(tmp_path, capsys):
    code, out, _ = run(["verify", "--gallery", "quad-saddle", "--check", "index-constancy", "--gate", "MA-negative",
                        "--delta", "0.5", "--out", str(tmp_path)], capsys)
    assert code == 0
    summary = json.loads(out)
    assert summary["verdict"] == "pass"
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["histogram"]["1"] == 63 * 63
    assert report["histogram"]["0"] == report["histogram"]["2"] == 0
    assert (tmp_path / "index.svg").exists() and (tmp_path / "det.svg").exists()


def test_verify_lewicka_counterexample_mode(tmp_path, capsys):
    code, out, _ = run(["verify", "--gallery", "lewicka", "--shape", "129,129", "--check", "index-constancy",
                        "--gate", "MA", "--delta", "0.01", "--strict", "--out", str(tmp_path)], capsys)
    assert code == 0
    summary = json.loads(out)
    assert summary["status"] == "hypothesis violated"
    hist = summary["histogram"]
    assert hist["0"] > 0 and hist["2"] > 0


def test_homology_punctured_square(capsys):
    code, out, _ = run(["homology", "--shape", "9,9", "--puncture", "center"], capsys)
    assert code == 0
    assert json.loads(out)["betti"] == [0, 0, 1]


def test_homology_of_sublevel(capsys):
    code, out, _ = run(["homology", "--gallery", "quad-saddle", "--shape", "33,33", "--level", "-0.1"], capsys)
    assert code == 0
    assert json.loads(out)["betti"] == [2, 0, 0]


@pytest.mark.parametrize("name", sorted(GALLERY))
@pytest.mark.parametrize("check,extra", [("index-constancy", ["--gate", "MA", "--delta", "0.01"]),
                                         ("ma", ["--delta", "0.01"]),
                                         ("qk", ["--bigk", "4"])])
def test_exit_code_contract(name, check, extra, tmp_path, capsys):
    base = ["verify", "--gallery", name, "--shape", _small(name), "--check", check] + extra
    assert run(base, capsys)[0] == 0  # scientific verdicts never fail a default run
    code, _, _ = run(base + ["--strict", "--out", str(tmp_path)], capsys)
    report = json.loads((tmp_path / "report.json").read_text())
    violated = not report["hypothesis"].get("satisfied", True)
    expected = 1 if report["verdict"] == "fail" and not violated else 0
    assert code == expected


def test_strict_fail_exit_one(capsys):
    code, out, _ = run(["verify", "--gallery", "quad-stretch", "--check", "qk", "--bigk", "3", "--strict"], capsys)
    assert code == 1 and json.loads(out)["verdict"] == "fail"


def test_parameters_echoed(tmp_path, capsys):
    run(["verify", "--gallery", "quad-min", "--check", "critgroups", "--samples", "3", "--radius", "0.3",
         "--seed", "9", "--out", str(tmp_path)], capsys)
    params = json.loads((tmp_path / "report.json").read_text())["parameters"]
    assert params["samples"] == 3 and params["radius"] == 0.3 and params["seed"] == 9
    assert params["gallery"] == "quad-min" and params["check"] == "critgroups"


@pytest.mark.parametrize("args", [
    ["critgroups", "--gallery", "quad-saddle", "--radius", "0.3"],
    ["verify", "--gallery", "quartic", "--check", "critgroups", "--samples", "4", "--seed", "3"],
    ["verify", "--gallery", "lewicka", "--check", "ma", "--delta", "0.01"],
])
def test_determinism(args, tmp_path, capsys):
    run(args + ["--out", str(tmp_path / "a")], capsys)
    run(args + ["--out", str(tmp_path / "b")], capsys)
    for f in ("report.json",):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_critgroups_command_reports_groups(tmp_path, capsys):
    code, _, _ = run(["critgroups", "--gallery", "quad-max", "--out", str(tmp_path)], capsys)
    assert code == 0
    groups = json.loads((tmp_path / "report.json").read_text())["extra"]["groups"]
    assert [g["betti"] for g in groups] == [[0, 0, 1]]


def test_sample_round_trip_and_index_from_file(tmp_path, capsys):
    assert run(["sample", "--gallery", "quad-saddle", "--shape", "17,17", "--out", str(tmp_path)], capsys)[0] == 0
    files = list(tmp_path.glob("*.field"))
    assert len(files) == 1
    code, out, _ = run(["index", "--input", str(files[0])], capsys)
    assert code == 0 and json.loads(out)["histogram"]["1"] == 15 * 15


def test_flow_writes_csv(tmp_path, capsys):
    code, _, _ = run(["flow", "--gallery", "quad-min", "--start", "0.5,0", "--level", "0.05",
                      "--out", str(tmp_path)], capsys)
    assert code == 0
    rows = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert rows[0] == "t,x1,x2,u"
    last = np.array(rows[-1].split(","), dtype=float)
    assert last[0] == pytest.approx(0.075, abs=1e-6)
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["extra"]["termination"] == "reached_level"


@pytest.mark.parametrize("args,needle", [
    (["index", "--gallery", "no-such-entry"], "no-such-entry"),
    (["index", "--gallery", "quad-min", "--shape", "5,x"], "--shape"),
    (["index", "--input", "/nonexistent/file.field"], "nonexistent"),
    (["flow", "--gallery", "quad-min", "--start", "0.5,0"], "--level"),
    (["homology", "--shape", "9,9", "--puncture", "40,40"], "--puncture"),
])
def test_usage_errors_exit_two(args, needle, capsys):
    code, _, err = run(args, capsys)
    assert code == 2
    assert needle in err
    assert "Traceback" not in err


def test_malformed_file_no_traceback(tmp_path):
    bad = tmp_path / "bad.field"
    bad.write_text("critmorse-field v1\ndim=2 kind=scalar\nshape=3,3\nbounds=0,1;0,1\nencoding=csv\n1\n2\n")
    proc = subprocess.run([sys.executable, "-m", "critmorse", "index", "--input", str(bad)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "value count mismatch" in proc.stderr
    assert "Traceback" not in proc.stderr


def test_argparse_errors_exit_two():
    proc = subprocess.run([sys.executable, "-m", "critmorse", "verify", "--check", "bogus"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "--check" in proc.stderr
