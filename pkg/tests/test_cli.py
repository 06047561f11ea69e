import csv

import pytest

from sparsedom.cli import build_parser, main
from sparsedom.experiments import ReportRow, emit_report, read_report


def test_lattice_check_writes_report(tmp_path):
    out = tmp_path / "l.csv"
    assert main(["lattice-check", "--depth", "3", "--out", str(out)]) == 0
    rows = read_report(str(out))
    assert {r.quantity for r in rows} >= {"triple_membership_failures", "containing_triple_failures"}


def test_verify_prints_csv(capsys):
    assert main(["verify", "comp-sparse", "--grid", "1,3", "--seed", "4"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("scenario,quantity") and "comp_sparse_deviation" in lines[1]


def test_config_file_is_applied(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[grid]\nn = 2\n")
    assert main(["lattice-check", "--config", str(cfg)]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert {r["depth"] for r in rows} == {"4"}


def test_report_merge_and_exit_codes(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_report([ReportRow("x", "q1", 1.0, 1.0, "pass")], a)
    emit_report([ReportRow("w", "q2", 2.0, 1.0, "fail")], b)
    assert main(["report", str(a)]) == 0
    capsys.readouterr()
    assert main(["report", str(a), str(b), "--out", str(tmp_path / "m.csv")]) == 1
    assert [r.scenario for r in read_report(str(tmp_path / "m.csv"))] == ["w", "x"]


def test_bad_inputs(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[grid]\nfoo = 1\n")
    assert main(["weights", "--config", str(bad)]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "missing.csv")]) == 2
    with pytest.raises(SystemExit):
        build_parser().parse_args(["verify", "nope"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["sparse", "--grid", "5"])
