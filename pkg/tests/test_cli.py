import csv

import numpy as np
import pytest

from qpik.cli import EXIT_CONFIG, EXIT_HALTED, EXIT_OK, main
from qpik.scenarios import load_scenario, read_runlog

METRIC_FILES = ("stats.csv", "jerk_hist.csv", "fft.csv", "cartesian.csv")


@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "s1"
    code = main(["run", "s1_floor", "--waypoints", "1", "--T-traj", "0.5", "--out", str(out)])
    return code, out


def test_run_writes_log_and_metrics(short_run, capsys):
    code, out = short_run
    assert code == EXIT_OK
    assert (out / "runlog.csv").exists() and (out / "meta.json").exists()
    for name in METRIC_FILES:
        assert (out / name).exists(), name
    log = read_runlog(out / "runlog.csv")
    assert len(log) == 250 and log.halted_ticks == 0


def test_stats_line_format(tmp_path, capsys):
    assert main(["run", "s2_sphere", "--waypoints", "1", "--T-traj", "0.2", "--out", str(tmp_path)]) == EXIT_OK
    line = capsys.readouterr().out.splitlines()[0]
    keys = [kv.split("=")[0] for kv in line.split()]
    assert keys == ["ticks", "median_solve_time_ms", "mean_nwsr", "mean_nac", "min_distance_m", "halted"]
    assert line.split()[0] == "ticks=100"


def test_default_output_under_env(tmp_path, monkeypatch):
    monkeypatch.setenv("QPIK_OUT", str(tmp_path))
    assert main(["run", "s1_floor", "--waypoints", "1", "--T-traj", "0.1", "--seed", "4"]) == EXIT_OK
    dirs = list(tmp_path.iterdir())
    assert len(dirs) == 1 and "seed4" in dirs[0].name


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "no_such_scenario"],
        ["run", "s1_floor", "--T-traj", "-1"],
        ["run", "s1_floor", "--d-buff", "0"],
        ["run", "s1_floor", "--seed", "x"],
        ["frobnicate"],
    ],
)
def test_config_errors_exit_one(argv, tmp_path, capsys):
    assert main(argv + (["--out", str(tmp_path)] if argv[0] == "run" else [])) == EXIT_CONFIG
    assert capsys.readouterr().err


def test_halted_run_exits_two(tmp_path, capsys):
    # home clearance is 0.092 m; a 0.14 m buffer cannot be restored in one tick
    out = tmp_path / "halt"
    code = main(["run", "s1_floor", "--d-buff", "0.14", "--waypoints", "1", "--T-traj", "0.1", "--out", str(out)])
    assert code == EXIT_HALTED
    log = read_runlog(out / "runlog.csv")
    assert log.halted_ticks == len(log) == 50
    assert np.all(log.qd == 0.0) and np.all(log.q == load_scenario("s1_floor").q0)
    assert "halted=50" in capsys.readouterr().out


def test_analyze_is_idempotent(short_run, tmp_path):
    _, out = short_run
    before = {n: (out / n).read_bytes() for n in METRIC_FILES}
    assert main(["analyze", str(out)]) == EXIT_OK
    assert main(["analyze", str(out / "runlog.csv"), "--out", str(tmp_path)]) == EXIT_OK
    for n in METRIC_FILES:
        assert (out / n).read_bytes() == before[n], n
        assert (tmp_path / n).read_bytes() == before[n], n


def test_analyze_truncated_log_reports_jerk(short_run, tmp_path, capsys):
    _, out = short_run
    lines = (out / "runlog.csv").read_text().splitlines()
    (tmp_path / "runlog.csv").write_text("\n".join(lines[:3]) + "\n")
    assert main(["analyze", str(tmp_path)]) == EXIT_OK
    assert "jerk error" in capsys.readouterr().err
    assert (tmp_path / "fft.csv").exists() and (tmp_path / "stats.csv").exists()


def test_analyze_schema_error(tmp_path, capsys):
    (tmp_path / "runlog.csv").write_text("t,q_0\n0.1,abc\n")
    assert main(["analyze", str(tmp_path)]) == EXIT_CONFIG
    assert "schema error" in capsys.readouterr().err
    assert main(["analyze", str(tmp_path / "missing.csv")]) == EXIT_CONFIG


def test_validate(tmp_path, capsys):
    assert main(["validate", "s1_floor", "s2_sphere", "s3_twoarm"]) == EXIT_OK
    assert capsys.readouterr().out.count(": ok") == 3
    bad = tmp_path / "bad.yaml"
    bad.write_text("chains: [\n")
    assert main(["validate", "s1_floor", str(bad)]) == EXIT_CONFIG


def _read(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_gen_reference(tmp_path):
    assert main(["gen-reference", "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["gen-reference", "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("smooth_reference.csv", "rough_reference.csv", "reference_summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header, smooth = _read(tmp_path / "a" / "smooth_reference.csv")
    assert header == ["t", "qd", "jerk"]
    assert np.abs(smooth[:, 1]).max() <= 1.39
    assert main(["gen-reference", "--seed", "1", "--out", str(tmp_path / "c")]) == EXIT_OK
    assert (tmp_path / "c" / "rough_reference.csv").read_bytes() != (tmp_path / "a" / "rough_reference.csv").read_bytes()


def test_gen_reference_zero_amplitude(tmp_path):
    assert main(["gen-reference", "--amplitude", "0", "--out", str(tmp_path)]) == EXIT_OK
    for name in ("smooth_reference.csv", "rough_reference.csv"):
        _, data = _read(tmp_path / name)
        assert np.all(data[:, 1:] == 0.0)
