import csv
import subprocess
import sys

import pytest

from disprod import cli
from disprod.harness import runner

CONFIG = """\
id: cli
env:
  name: pendulum
  params: {alpha: 0.5}
planner:
  kind: cem
  settings: {depth: 3, population: 8, iterations: 1}
repetitions: 1
runs_per_repetition: 2
episode_cap: 3
record_wall_time: false
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(CONFIG)
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_results(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", str(config), "--out", str(out)]) == cli.EXIT_OK
    rows = _rows(out / "results.csv")
    assert len(rows) == 1 and rows[0]["planner"] == "cem"
    assert len(_rows(out / "episodes.csv")) == 2
    assert "mean_return" in capsys.readouterr().out


def test_seed_override_changes_episodes(config, tmp_path):
    cli.main(["run", str(config), "--out", str(tmp_path / "a")])
    cli.main(["run", str(config), "--out", str(tmp_path / "b"), "--seed", "99"])
    a = _rows(tmp_path / "a" / "episodes.csv")
    b = _rows(tmp_path / "b" / "episodes.csv")
    assert a[0]["seed"] != b[0]["seed"]


def test_sweep_overrides_axis(config, tmp_path):
    out = tmp_path / "sweep"
    assert cli.main(["sweep", str(config), "--axis", "alpha", "--values", "0", "1.5", "--out", str(out)]) == cli.EXIT_OK
    rows = _rows(out / "results.csv")
    assert [r["value"] for r in rows] == ["0", "1.5"]
    assert {r["axis"] for r in rows} == {"alpha"}


def test_partial_exit_code(config, tmp_path, monkeypatch):
    def boom(*args):
        raise RuntimeError("simulated crash")

    monkeypatch.setattr(runner, "run_episode_for", boom)
    assert cli.main(["run", str(config), "--out", str(tmp_path / "p")]) == cli.EXIT_PARTIAL
    rows = _rows(tmp_path / "p" / "results.csv")
    assert rows[0]["mean_return"] == ""
    assert _rows(tmp_path / "p" / "episodes.csv")[0]["status"] == "error"


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(CONFIG.replace("repetitions", "repetition"))
    assert cli.main(["run", str(bad)]) == cli.EXIT_ERROR
    err = capsys.readouterr().err
    assert "repetition" in err and "line" in err


def test_study(tmp_path, capsys):
    out = tmp_path / "study"
    code = cli.main(["study", "--env", "simple_env", "--alphas", "0.1", "0.2", "--depth", "4", "--samples", "500", "--out", str(out)])
    assert code == cli.EXIT_OK
    rows = _rows(out / "study.csv")
    assert {r["alpha"] for r in rows} == {"0.1", "0.2"}
    assert "no_variance" in capsys.readouterr().out


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        cli.main(["plot"])


def test_log_level_from_environment(config, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "disprod.cli", "run", str(config), "--out", str(tmp_path / "o")],
        env={"DISPROD_LOG_LEVEL": "INFO", "PATH": "/usr/bin:/bin", "JAX_PLATFORMS": "cpu"},
        capture_output=True,
        text=True,
        timeout=300,
    )
    assert proc.returncode == 0
    assert "INFO disprod" in proc.stderr
