import csv

import pytest

from sde_weak_lab import cli
from sde_weak_lab.maps import CheckReport
from sde_weak_lab.weakconv import CSV_HEADER


def test_parse_number():
    assert cli.parse_number("2^-10") == 2.0 ** -10
    assert cli.parse_number(" 0.25 ") == 0.25
    assert cli.parse_list("2^-2,0.1") == [0.25, 0.1]
    with pytest.raises(ValueError):
        cli.parse_number("two")


def test_predict_order_prints_case_one_numbers(capsys):
    assert cli.main(["predict-order", "--problem", "cubic_quadratic", "--sigma", "0.1",
                     "--scheme", "bs1"]) == 0
    out = capsys.readouterr().out
    assert "19.5" in out
    q = float(next(l for l in out.splitlines() if l.startswith("q_raw")).split()[1])
    assert q == pytest.approx(0.803, abs=1e-2)


def _run_small(tmp_path, *extra):
    out = tmp_path / "res"
    argv = ["run-weak-error", "--problem", "cubic_linear", "--scheme", "bs2", "--phi", "square",
            "--T", "1", "--x0", "0.5", "--h", "0.25,0.125", "--M", "3000", "--h-ref", "2^-5",
            "--seed", "7", "--out", str(out), *extra]
    return cli.main(argv), out


def test_run_weak_error_outputs(tmp_path, capsys):
    code, out = _run_small(tmp_path)
    assert code in (0, 2)
    rows = list(csv.reader(open(f"{out}.csv")))
    assert tuple(rows[0]) == CSV_HEADER and len(rows) == 3
    assert [r[3] for r in rows[1:]] == ["0.25", "0.125"]
    assert (tmp_path / "res_bs2_square.dat").exists()
    manifest = open(f"{out}.manifest").read()
    assert "run.seed = 7" in manifest and "meta.wall_time" in manifest
    assert "meta.slope.bs2.square" in manifest


def test_unresolved_fit_exits_two(tmp_path):
    code, _ = _run_small(tmp_path, "--M", "20")
    assert code == cli.EXIT_UNRESOLVED


def test_manifest_round_trip_reproduces_csv(tmp_path):
    code, out = _run_small(tmp_path, "--coupling", "common")
    first = open(f"{out}.csv").read()
    again = tmp_path / "again"
    code2 = cli.main(["run-weak-error", "--config", f"{out}.manifest", "--out", str(again)])
    assert code2 == code
    assert open(f"{again}.csv").read() == first


def test_csv_independent_of_threads(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    _, a = _run_small(tmp_path / "a", "--threads", "1", "--M", "40000")
    _, b = _run_small(tmp_path / "b", "--threads", "3", "--M", "40000")
    assert open(f"{a}.csv").read() == open(f"{b}.csv").read()


@pytest.mark.parametrize("argv", [
    ["predict-order", "--problem", "nope"],
    ["predict-order", "--scheme", "rk4"],
    ["run-weak-error", "--integral-mode", "magic"],
    ["run-weak-error", "--coupling", "sometimes"],
    ["check-maps", "--family", "bogus"],
])
def test_config_errors_exit_one(argv):
    assert cli.main(argv) == cli.EXIT_CONFIG


def test_bad_config_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("run.bogus = 3\n")
    assert cli.main(["predict-order", "--config", str(p)]) == cli.EXIT_CONFIG
    p.write_text("no equals sign\n")
    assert cli.main(["predict-order", "--config", str(p)]) == cli.EXIT_CONFIG
    assert cli.main(["predict-order", "--config", str(tmp_path / "missing")]) == cli.EXIT_CONFIG


def test_config_file_then_flags(tmp_path, capsys):
    p = tmp_path / "c.cfg"
    p.write_text("# case one\nproblem.name = cubic_quadratic\nproblem.sigma = 0.5\n"
                 "scheme.preset = bs2\n")
    args = cli.make_parser().parse_args(["predict-order", "--config", str(p), "--sigma", "0.1"])
    cfg = cli.build_config(args)
    assert cfg.sigma == 0.1 and cfg.scheme == "bs2"


def test_check_maps_clean(capsys):
    assert cli.main(["check-maps", "--family", "balanced", "--power", "2",
                     "--samples", "100000"]) == 0
    assert "0 violations" in capsys.readouterr().out


def test_check_maps_violation_exit(monkeypatch):
    bad = CheckReport(samples=1, max_violation=1.0, violations=1,
                      witnesses=[{"z": [1.0], "h": 0.1, "w": None, "excess": 1.0}])
    monkeypatch.setattr(cli, "check_h1_h3", lambda *a, **k: bad)
    assert cli.main(["check-maps", "--family", "tamed", "--varsigma", "1"]) == cli.EXIT_VIOLATION


def test_moment_trace_and_one_step_files(tmp_path, capsys):
    out = tmp_path / "m"
    assert cli.main(["moment-trace", "--problem", "cubic_linear", "--scheme", "bs2", "--T", "1",
                     "--x0", "0.5", "--h", "0.25", "--M", "500", "--out", str(out)]) == 0
    lines = open(f"{out}_moments.csv").read().splitlines()
    assert lines[0] == "scheme,h,n,t,moment" and len(lines) == 6
    assert cli.main(["one-step", "--problem", "cubic_linear", "--scheme", "ts1", "--x0", "0.5",
                     "--h", "0.08,0.04", "--M", "2000", "--substeps", "8",
                     "--out", str(out)]) == 0
    assert len(open(f"{out}_onestep.csv").read().splitlines()) == 3


def test_divergence_demo_runs(capsys):
    assert cli.main(["divergence-demo", "--M", "500"]) == 0
    out = capsys.readouterr().out
    assert out.count("diverged") == 4
