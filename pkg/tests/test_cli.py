import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from viscostring.cli import main
from viscostring.scenarios import config_dict


def write_cfg(path, base="constant", patch=None, **kw):
    kw.setdefault("n_time", 1001)
    kw.setdefault("t_max", 4.0)
    kw.setdefault("n_modes", 8)
    d = config_dict(base, **kw)
    d.update(patch or {})
    path.write_text(json.dumps(d))
    return str(path)


def expr(e):
    return {"kind": "expr", "expr": e}


def read_csv(path):
    return list(csv.reader(open(path)))


@pytest.fixture
def unit_cfg(tmp_path):
    return write_cfg(tmp_path / "unit.json")


def test_eig_constant_case(unit_cfg, tmp_path):
    out = tmp_path / "o"
    assert main(["eig", "--config", unit_cfg, "--out", str(out)]) == 0
    rows = read_csv(out / "eig.csv")
    assert rows[0] == ["n", "lambda_n", "slope0_n"]
    assert float(rows[1][1]) == 1.0
    assert float(rows[1][2]) == pytest.approx(math.sqrt(2 / math.pi), abs=1e-15)
    assert (out / "asymptotics.csv").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert {"config_hash", "command", "tool_version", "outputs", "timings"} <= set(man)
    assert all((out / p).exists() for p in man["outputs"])


def test_eig_density_four(tmp_path):
    cfg = write_cfg(tmp_path / "c4.json", patch={"density": expr("4")})
    assert main(["eig", "--config", cfg, "--out", str(tmp_path)]) == 0
    lam = [float(r[1]) for r in read_csv(tmp_path / "eig.csv")[1:]]
    assert np.allclose(lam, 2.0 * np.arange(1, 9), rtol=1e-8)


def test_global_flags_after_subcommand(unit_cfg, tmp_path):
    assert main(["--out", str(tmp_path / "a"), "eig", "--config", unit_cfg]) == 0
    assert main(["eig", "--config", unit_cfg, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "eig.csv").read_bytes() == (tmp_path / "b" / "eig.csv").read_bytes()


def test_coarse_grid_is_numeric_failure(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "coarse.json", n_space=41, n_modes=16)
    assert main(["eig", "--config", cfg, "--out", str(tmp_path)]) == 3
    assert "grid-too-coarse" in capsys.readouterr().err


@pytest.mark.parametrize("traction,expected", [("1", math.pi), ("4", math.pi / 2)])
def test_t0(tmp_path, capsys, traction, expected):
    cfg = write_cfg(tmp_path / "t.json", patch={"traction": expr(traction)})
    assert main(["t0", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(expected, abs=1e-10)
    assert json.loads((tmp_path / "t0.json").read_text())["T0"] == pytest.approx(expected, abs=1e-10)


def test_t0_short_horizon(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "s.json", t_max=2.0)
    assert main(["t0", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "horizon-too-short" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["eig"],                                        # no config
    ["eig", "--config", "does-not-exist.json"],
    ["control", "--config", "{cfg}", "--target", "mode:0"],
    ["control", "--config", "{cfg}", "--target", "bogus:1"],
    ["control", "--config", "{cfg}", "--target", "expr:import os"],
    ["simulate", "--config", "{cfg}", "--forcing", "indicator:2,1"],
    ["eig", "--config", "{cfg}", "--threads", "0"],
    ["frobnicate"],
])
def test_bad_input_exits_2(unit_cfg, tmp_path, argv):
    argv = [a.replace("{cfg}", unit_cfg) for a in argv] + ["--out", str(tmp_path)]
    assert main(argv) == 2


def test_malformed_config_exits_2(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"traction": 1}')
    assert main(["eig", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_control_zero_and_first_mode(unit_cfg, tmp_path):
    out = tmp_path / "c"
    assert main(["control", "--config", unit_cfg, "--out", str(out), "--target",
                 "expr:0*xi", "--T", str(math.pi)]) == 0
    assert all(float(r[1]) == 0.0 for r in read_csv(out / "control.csv")[1:])
    assert main(["control", "--config", unit_cfg, "--out", str(out), "--target", "mode:1",
                 "--T", str(math.pi), "--verify"]) == 0
    rows = np.array(read_csv(out / "control.csv")[1:], dtype=float)
    assert np.max(np.abs(rows[:, 1] - math.sqrt(2 / math.pi) * np.sin(rows[:, 0]))) < 1e-3
    rep = json.loads((out / "control_report.json").read_text())
    assert rep["round_trip_relative_error"] <= 0.02


def test_simulate_first_mode_ramp(unit_cfg, tmp_path):
    assert main(["simulate", "--config", unit_cfg, "--out", str(tmp_path), "--forcing", "mode:1",
                 "--sigma", "1", "--T", "3", "--cross-check"]) == 0
    rows = np.array(read_csv(tmp_path / "eta.csv")[1:], dtype=float)
    t, eta = rows[:, 0], rows[:, 1]
    assert np.max(np.abs(eta - math.sqrt(2 / math.pi) * (1 - np.cos(t)))) < 1e-5
    assert (tmp_path / "wfinal.csv").exists() and (tmp_path / "cross_check.json").exists()


def test_identify_first_mode(unit_cfg, tmp_path):
    assert main(["identify", "--config", unit_cfg, "--out", str(tmp_path), "--truth", "mode:1",
                 "--T", str(math.pi), "--n-modes", "4", "--emit-sigma"]) == 0
    c = np.array(read_csv(tmp_path / "coefficients.csv")[1:], dtype=float)
    assert abs(c[0, 1] - 1.0) <= 1e-2 and np.max(np.abs(c[1:, 1])) <= 1e-2
    assert (tmp_path / "bhat.csv").exists()
    assert (tmp_path / "sigma" / "traces_manifest.json").exists()


def test_diagnostics(unit_cfg, tmp_path):
    assert main(["diagnostics", "--config", unit_cfg, "--out", str(tmp_path),
                 "--T-factors", "0.8,1.2", "--n-list", "4,8"]) == 0
    rows = read_csv(tmp_path / "riesz.csv")
    assert rows[0][:6] == ["T", "n_modes", "eig_min", "eig_max", "cond", "D_N"]
    assert len(rows) == 5


def test_csv_outputs_are_byte_identical_across_runs(tmp_path):
    cfg = write_cfg(tmp_path / "g.json", base="generic", n_time=801, t_max=8.0)
    outs = []
    for tag in ("r1", "r2"):
        out = tmp_path / tag
        assert main(["control", "--config", cfg, "--out", str(out), "--target",
                     "indicator:1,2", "--seed", "3"]) == 0
        outs.append(out)
    for name in ("control.csv", "residuals.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_console_entry_point(unit_cfg, tmp_path):
    res = subprocess.run([sys.executable, "-m", "viscostring.cli", "t0", "--config", unit_cfg,
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0
    assert float(res.stdout) == pytest.approx(math.pi, abs=1e-10)
