import json
import subprocess
import sys

import pytest

from couette_echo import cli
from couette_echo.evolve import IntegrationFailure

ECHO = """\
# small forward echo run
params.k0 = 8
params.sigma = 0.1
params.alpha = 1.01
params.eps0 = 0.05
grid.N_v = 1024
grid.L_v = 25.132741228718345
"""


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_echo_run_is_deterministic(tmp_path):
    cfg = write(tmp_path, ECHO)
    assert cli.run("echo", cfg, tmp_path / "a") == 0
    assert cli.run("echo", cfg, tmp_path / "b") == 0
    a = (tmp_path / "a" / "growth.csv").read_bytes()
    assert a == (tmp_path / "b" / "growth.csv").read_bytes()
    assert len(a.splitlines()) == 2  # header and the single k0 -> k1 step


def test_manifest_contents(tmp_path):
    cfg = write(tmp_path, ECHO)
    cli.run("echo", cfg, tmp_path / "o")
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["experiment"] == "echo"
    assert m["artifacts"] == ["growth.csv"]
    assert m["config"]["params.k0"] == 8 and m["config"]["evolve.dt_base"] == 0.25
    assert m["params"]["k0"] == 8
    assert len(m["config_digest"]) == 64
    assert {"python", "numpy", "scipy", "backend"} <= set(m["versions"])
    assert m["metrics"]["steps"] == 1
    # the ratio product tracks the growth product within the band slack
    assert abs(m["metrics"]["log_ratio_product"] - m["metrics"]["log_growth_product"]) < 0.05


def test_toml_config_matches_flat(tmp_path):
    toml = """\
[params]
k0 = 8
sigma = 0.1
alpha = 1.01
eps0 = 0.05
[grid]
N_v = 1024
L_v = 25.132741228718345
"""
    cli.run("echo", write(tmp_path, toml, "run.toml"), tmp_path / "t")
    cli.run("echo", write(tmp_path, ECHO), tmp_path / "f")
    a = json.loads((tmp_path / "t" / "manifest.json").read_text())
    b = json.loads((tmp_path / "f" / "manifest.json").read_text())
    assert a["config_digest"] == b["config_digest"]


@pytest.mark.parametrize("text, msg", [
    (ECHO.replace("params.k0 = 8\n", ""), "missing required key params.k0"),
    (ECHO + "grid.N_v = 1000\n", "power of two"),
    (ECHO + "evolve.dt_base = 0.75\n", "dt_base"),
    (ECHO + "evolve.green = lu\n", "evolve.green"),
    (ECHO + "colour = red\n", "unknown key colour"),
    (ECHO + "params.sigma = fast\n", "params.sigma"),
    (ECHO + "no equals sign\n", "expected 'key = value'"),
    (ECHO + "experiment = taylor\n", "command line"),
])
def test_config_errors_exit_2(tmp_path, capsys, text, msg):
    assert cli.run("echo", write(tmp_path, text), tmp_path / "o") == 2
    assert msg in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_missing_config_file(tmp_path, capsys):
    assert cli.run("echo", tmp_path / "nope.cfg") == 2
    assert "cannot read config" in capsys.readouterr().err


def test_param_constraint_is_a_config_error(tmp_path, capsys):
    assert cli.run("echo", write(tmp_path, ECHO.replace("alpha = 1.01", "alpha = 0.5")), tmp_path / "o") == 2
    assert "params:" in capsys.readouterr().err


def test_numerical_failure_exit_3(tmp_path, monkeypatch):
    def boom(cfg, p, out):
        raise IntegrationFailure("step rejected", 12.5)

    monkeypatch.setitem(cli.RUNNERS, "echo", boom)
    assert cli.run("echo", write(tmp_path, ECHO), tmp_path / "o") == 3
    info = json.loads((tmp_path / "o" / "failure.json").read_text())
    assert info["error"] == "IntegrationFailure" and info["last_good_time"] == 12.5
    assert not (tmp_path / "o" / "manifest.json").exists()


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, ECHO.replace("params.k0 = 8\n", ""))
    r = subprocess.run([sys.executable, "-m", "couette_echo.cli", "echo", "--config", str(cfg)],
                       capture_output=True, text=True, cwd=tmp_path)
    assert r.returncode == 2
    r = subprocess.run([sys.executable, "-m", "couette_echo.cli", "spin", "--config", str(cfg)],
                       capture_output=True, text=True, cwd=tmp_path)
    assert r.returncode == 2 and "invalid choice" in r.stderr


def test_report_from_saved_background(tmp_path):
    text = ECHO.replace("grid.N_v = 1024", "grid.N_v = 64").replace("params.k0 = 8", "params.k0 = 4") \
        + "params.eps0 = 0.3\nevolve.t_end = 3.0\nevolve.dt_base = 0.25\nreport.samples = 3\n"
    text = text.replace("params.eps0 = 0.05\n", "")
    cfg = write(tmp_path, text)
    assert cli.run("background", cfg, tmp_path / "bg") == 0
    cfg2 = write(tmp_path, text + f"report.trajectory = {tmp_path / 'bg' / 'background.traj'}\n", "r.cfg")
    assert cli.run("report", cfg2, tmp_path / "rep") == 0
    rep = json.loads((tmp_path / "rep" / "energy.json").read_text())
    assert rep["count"] == 3 and rep["reports"][-1]["t"] == 3.0
