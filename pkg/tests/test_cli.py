import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from collarlab import cli
from collarlab.errors import IncompatibleReports, SchemaError

SMALL = {
    "name": "small-toy",
    "seed": 5,
    "model": {"m": 2, "N": 2, "length": 1.0, "grid_points": 33},
    "J": [[[0, -1], [1, 0]]],
    "B": [{"gamma": [[0, [[[0, -1], 0], [0, [0, 1]]]]], "V": [[0, [[0, 0.7], [0.7, 0]]]]}],
    "selfadjoint": True,
    "experiments": {"sectorial": {"trials": 3, "size": 4}, "calderon": {"solves": 2}, "cobordism": {}},
}


def write(tmp_path, obj, name="scenario.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj, indent=2))
    return p


def run(args, capsys):
    code = cli.main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def small_reports(tmp_path_factory):
    base = tmp_path_factory.mktemp("small")
    scen = write(base, SMALL)
    outs = []
    for threads in (1, 3):
        out = base / f"t{threads}"
        assert cli.main(["run", str(scen), "--out", str(out), "--no-timings", "--threads", str(threads)]) == 0
        outs.append(out / "report.json")
    return scen, outs


def test_list_and_flag(capsys):
    for args in (["list"], ["--list"]):
        code, out, _ = run(args, capsys)
        assert code == 0
        assert "experiments:" in out and "diag-toy" in out and "continuity" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "collarlab", "--list"], capture_output=True, text=True)
    assert proc.returncode == 0 and "scenarios:" in proc.stdout


def test_bundled_diag_toy_passes(tmp_path, capsys):
    code, out, _ = run(["run", "diag-toy", "--out", tmp_path, "--no-timings"], capsys)
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["passed"] and "timings" not in report
    for exp in report["experiments"].values():
        assert exp["assertions"] and all(a["pass"] for a in exp["assertions"])
        assert all(set(a) == {"name", "lhs", "op", "rhs", "tol", "pass"} for a in exp["assertions"])


def test_bad_cut_exits_with_assertion_status(tmp_path, capsys):
    code, out, _ = run(["run", "diag-toy-bad-cut", "--out", tmp_path], capsys)
    assert code == 2
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["experiments"]["sectorial"]["error"]["code"] == "CutInvalid"
    assert "CutInvalid" in out and "timings" in report


def test_threads_do_not_change_report(small_reports):
    _, (a, b) = small_reports
    assert a.read_bytes() == b.read_bytes()


def test_compare_identical_and_perturbed(small_reports, tmp_path, capsys):
    _, (a, b) = small_reports
    code, out, _ = run(["compare", a, b], capsys)
    assert code == 0 and json.loads(out)["differences"] == []
    rep = json.loads(a.read_text())
    rep["experiments"]["calderon"]["values"]["idempotent"] = 1.0
    changed = write(tmp_path, rep, "changed.json")
    code, out, _ = run(["compare", a, changed], capsys)
    diffs = json.loads(out)["differences"]
    assert code == 2 and [d["field"] for d in diffs] == ["experiments.calderon.values.idempotent"]


def test_compare_ignores_timings_and_respects_tol():
    a = {"scenario": {"name": "x"}, "versions": {"collarlab": "1.0"}, "v": 1.0, "timings": {"a": 1}}
    b = {"scenario": {"name": "x"}, "versions": {"collarlab": "1.2"}, "v": 1.0 + 1e-12, "timings": {"a": 9}}
    assert cli.compare_reports(a, b) == [{"field": "versions.collarlab", "a": "1.0", "b": "1.2", "reason": "value"}]
    b["v"] = 1.1
    assert any(d["field"] == "v" for d in cli.compare_reports(a, b, tol=1e-3))
    assert not any(d["field"] == "v" for d in cli.compare_reports(a, b, tol=0.2))


def test_compare_incompatible(small_reports, tmp_path, capsys):
    _, (a, _) = small_reports
    rep = json.loads(a.read_text())
    rep["scenario"]["name"] = "other"
    other = write(tmp_path, rep, "other.json")
    code, _, err = run(["compare", a, other], capsys)
    assert code == 1 and json.loads(err)["code"] == "IncompatibleReports"
    rep["scenario"]["name"] = "small-toy"
    rep["versions"]["collarlab"] = "99.0.0"
    with pytest.raises(IncompatibleReports):
        cli.compare_reports(json.loads(a.read_text()), rep)


def test_schema_errors_carry_location(tmp_path, capsys):
    bad = dict(SMALL)
    bad["model"] = {"m": 2, "length": 1.0}
    code, _, err = run(["run", write(tmp_path, bad), "--out", tmp_path / "o"], capsys)
    msg = json.loads(err)
    assert code == 1 and msg["code"] == "SchemaError"
    assert "model.N" in msg["message"] and "line" in msg["message"]


def test_seed_is_mandatory_for_randomized_experiments():
    bad = dict(SMALL)
    del bad["seed"]
    with pytest.raises(SchemaError, match="seed"):
        cli.parse_scenario(json.dumps(bad))


@pytest.mark.parametrize(
    "patch",
    [
        {"boundary_condition": "Dirichlet"},
        {"experiments": {"nonsense": {}}},
        {"J": [[[0, -1]]]},
        {"cut": {"radius": 1}},
        {"seed": -1},
    ],
)
def test_schema_rejects_malformed_fields(patch):
    bad = dict(SMALL)
    bad.update(patch)
    with pytest.raises(SchemaError):
        cli.parse_scenario(json.dumps(bad))


def test_invalid_json_reports_line():
    with pytest.raises(SchemaError, match="line 3"):
        cli.parse_scenario('{\n "name": "x",\n "model": ,\n}')


def test_complex_entries_parse():
    sc = cli.parse_scenario(json.dumps(SMALL))
    assert sc.J[0][1, 0] == 1.0
    gamma = sc.B[0][0][0][1]
    assert gamma[0, 0] == -1j and gamma[1, 1] == 1j


def test_unknown_experiment_flag(capsys):
    code, _, err = run(["run", "diag-toy", "--experiments", "bogus"], capsys)
    assert code == 1 and "bogus" in json.loads(err)["message"]


def test_substreams_are_labelled_and_reproducible():
    a = cli.substream(3, "x").standard_normal(4)
    assert np.array_equal(a, cli.substream(3, "x").standard_normal(4))
    assert not np.array_equal(a, cli.substream(3, "y").standard_normal(4))
    assert not np.array_equal(a, cli.substream(4, "x").standard_normal(4))


def test_continuity_csv_columns(tmp_path, capsys):
    code, _, _ = run(["run", "mass-crossing", "--out", tmp_path, "--no-timings"], capsys)
    assert code == 0
    with open(tmp_path / "continuity_calderon.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["z_i", "z_j", "d_str", "diff_norm", "flag"]
    assert "CutCrossed" in [r[4] for r in rows[1:]]
    assert (tmp_path / "continuity_calderon.csv").read_bytes().count(b"\r") == 0
