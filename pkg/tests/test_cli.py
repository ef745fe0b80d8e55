import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from closedloop.cli import OUT_ENV, main
from closedloop.cli.config import ConfigError, parse_config
from closedloop.cli.polynomial import Polynomial
from closedloop.cli.scenarios import CATALOG, lookup

HAM_FAIL = """\
scenario: inline
problem:
  kind: hamiltonian
  U: [[0.5, 2]]
tolerances:
  energy: 1.0e-30
"""

HAM_OK = HAM_FAIL.replace("1.0e-30", "1.0e-4")

OFF_GRID = """\
scenario: inline
problem:
  F: [[-0.5, 2], [-0.5, 0, 2]]
  f: [[1, 0, 1]]
  x0: 1.0
grid:
  x_min: -0.5
  x_max: 0.5
  nx: 21
  nt: 401
"""

INLINE_LQ = """\
scenario: inline
problem:
  F: [[-0.5, 2], [-0.5, 0, 2]]
  f: [[1, 0, 1]]
  horizon: [{t0}, {t1}]
grid:
  nx: 41
  nt: 201
"""


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def _stable(path):
    return json.loads((path / "report.json").read_text(encoding="utf-8"))["stable"]


def test_list(capsys):
    assert main(["list"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) >= 5
    for key in CATALOG:
        assert any(line.startswith(key) and "[" in line for line in lines)


def test_exit_pass_and_fail(tmp_path, capsys):
    assert main(["--out", str(tmp_path / "ok"), "run", _write(tmp_path, "ok.yaml", HAM_OK)]) == 0
    assert main(["--out", str(tmp_path / "bad"), "run", _write(tmp_path, "bad.yaml", HAM_FAIL)]) == 1
    out = capsys.readouterr().out
    assert "FAIL  energy_drift" in out
    assert _stable(tmp_path / "bad")["all_pass"] is False
    assert (tmp_path / "bad" / "trajectory.csv").exists()


def test_exit_solver_error(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["--out", str(out), "run", _write(tmp_path, "s.yaml", OFF_GRID)]) == 3
    err = capsys.readouterr().err
    assert "DomainError" in err and "Traceback" in err
    assert not out.exists()


@pytest.mark.parametrize("text, needle", [
    ("scenario: lq\nbogus: 1\n", "line 2: bogus"),
    ("scenario: nowhere\n", "unknown scenario"),
    ("scenario: lq\ngrid:\n  nx: many\n", "line 3: grid.nx"),
    ("scenario: lq\ngrid: [1, 2\n", "YAML"),
    ("scenario: lq\ngrid:\n  nx: 401\n  nt: 20\n", "nt >= "),
    ("- just\n- a list\n", "mapping"),
])
def test_config_errors_write_nothing(tmp_path, capsys, text, needle):
    out = tmp_path / "o"
    assert main(["--out", str(out), "run", _write(tmp_path, "c.yaml", text)]) == 2
    assert needle in capsys.readouterr().err
    assert not out.exists()


def test_missing_config_file(tmp_path, capsys):
    assert main(["--out", str(tmp_path / "o"), "run", str(tmp_path / "absent.yaml")]) == 2
    assert not (tmp_path / "o").exists()


def test_sweep_needs_three_points(tmp_path, capsys):
    cfg = _write(tmp_path, "s.yaml", "scenario: lq\nsweep:\n  grid: [[101, 501], [201, 1001]]\n")
    out = tmp_path / "o"
    assert main(["--out", str(out), "sweep", cfg, "--axis", "grid"]) == 2
    assert "at least 3" in capsys.readouterr().err
    assert not out.exists()


def test_sweep_axis_must_exist(tmp_path, capsys):
    assert main(["--out", str(tmp_path / "o"), "sweep", "tower", "--axis", "hbar"]) == 2
    assert "no hbar sweep" in capsys.readouterr().err


def test_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--out", str(a), "run", "tower"]) == 0
    assert main(["--out", str(b), "run", "tower"]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        if name.endswith(".csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
    assert json.dumps(_stable(a), sort_keys=True) == json.dumps(_stable(b), sort_keys=True)


def test_output_formats(tmp_path):
    out = tmp_path / "o"
    assert main(["--out", str(out), "run", _write(tmp_path, "ok.yaml", HAM_OK)]) == 0
    rows = (out / "trajectory.csv").read_text().splitlines()
    assert rows[0] == "t,x,p_or_lambda,u"
    assert rows[1].split(",")[0] == "0"
    raw = (out / "report.json").read_text(encoding="utf-8")
    doc = json.loads(raw)
    assert set(doc) == {"stable", "timings"}
    assert raw == json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    assert doc["stable"]["config"]["problem"]["kind"] == "hamiltonian"


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "root"))
    assert main(["run", "tower"]) == 0
    assert (tmp_path / "root" / "tower" / "report.json").exists()


def test_compare(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--out", str(a), "run", _write(tmp_path, "a.yaml", INLINE_LQ.format(t0=0, t1=1))]) == 0
    assert main(["--out", str(b), "run", _write(tmp_path, "b.yaml", INLINE_LQ.format(t0=2, t1=3))]) == 0
    capsys.readouterr()
    assert main(["compare", str(a), str(a), "--out", str(tmp_path / "cmp")]) == 0
    diff = json.loads((tmp_path / "cmp" / "compare.json").read_text())
    assert all(v["sup"] == 0.0 and v["l2"] == 0.0 for v in diff["columns"].values())
    assert main(["compare", str(a), str(b)]) == 2
    assert "disjoint" in capsys.readouterr().err
    free = tmp_path / "free"
    assert main(["--out", str(free), "run", "free-particle"]) == 0
    capsys.readouterr()
    assert main(["compare", str(a), str(free)]) == 2
    assert "incompatible" in capsys.readouterr().err


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "closedloop.cli", "list"], capture_output=True, text=True)
    assert r.returncode == 0 and "lq" in r.stdout
    r = subprocess.run([sys.executable, "-m", "closedloop.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("closedloop ")


# config and polynomial grammar ----------------------------------------------------

CONFIGS = sorted((Path(__file__).resolve().parent.parent / "configs").glob("*.yaml"))


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.name)
def test_shipped_configs_validate(path):
    cfg = parse_config(path.read_text(encoding="utf-8"), str(path))
    assert lookup(cfg).id in set(CATALOG) | {"inline"}


def test_shipped_tower_config_runs(tmp_path):
    assert main(["--out", str(tmp_path / "t"), "run", str(CONFIGS[0].parent / "tower.yaml")]) == 0


def test_parse_config_line_index():
    cfg = parse_config("scenario: lq\ngrid:\n  nx: 101\n")
    assert cfg.scenario == "lq" and cfg.lines["grid.nx"] == 3
    with pytest.raises(ConfigError) as info:
        parse_config("grid: {}\n")
    assert info.value.key == "scenario"


def test_polynomial_terms_and_partials():
    # F = -x^2/2 - u^2/2 + 3 x u t
    F = Polynomial.from_terms([[-0.5, 2], [-0.5, 0, 2], [3, 1, 1, 1]])
    assert F(2.0, 1.0, 0.5) == -2.0 - 0.5 + 3.0
    assert F.partial("x")(2.0, 1.0, 0.5) == -2.0 + 1.5
    assert F.partial("u")(2.0, 1.0, 0.5) == -1.0 + 3.0
    assert F.partial("t")(2.0, 1.0, 0.5) == 6.0
    assert F.degree() == 3
    x = np.linspace(-1, 1, 5)
    assert F(x, 0.0, 0.0).shape == (5,)
    assert Polynomial.from_terms(None)(1.0) == 0.0


@pytest.mark.parametrize("raw", [[[1, 5]], [[1, -1]], [[1, 0.5]], "x^2", [[1, 1, 1, 1, 1]]])
def test_polynomial_rejects(raw):
    with pytest.raises(ValueError):
        Polynomial.from_terms(raw)


def test_polynomial_error_reaches_cli(tmp_path, capsys):
    cfg = _write(tmp_path, "p.yaml", "scenario: inline\nproblem:\n  F: [[1, 7]]\n  f: [[1, 0, 1]]\n")
    assert main(["--out", str(tmp_path / "o"), "run", cfg]) == 2
    assert "problem.F" in capsys.readouterr().err
