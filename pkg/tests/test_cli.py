import json
import math
import shutil
import subprocess

import numpy as np
import pytest

from fastspread import diagnostics as dg
from fastspread.cli import main


def write_cfg(path, **over):
    doc = {
        "experiment": {"kind": "Simulate"},
        "grid": {"dim": 2, "n": 64, "half_length": 6.0},
        "flow": {"kind": "none"},
        "model": {"kind": "passive"},
        "time": {"t_end": 0.05, "dt_max": 0.01},
        "initial": {"kind": "gaussian", "mass": 1.0, "sigma": 0.6},
    }
    doc.update(over)
    path.write_text(json.dumps(doc))
    return str(path)


def test_simulate(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json")
    out = tmp_path / "out"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    assert "summary.json" in capsys.readouterr().out
    assert json.loads((out / "summary.json").read_text())["kind"] == "Simulate"


def test_bad_config_exit_two(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", grid={"dim": 2, "n": 63, "half_length": 6.0})
    assert main(["simulate", "--config", cfg]) == 2
    assert capsys.readouterr().err.startswith("error: grid:")


def test_search_rejects_non_threshold_kind(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json")
    assert main(["search", "--config", cfg]) == 2


def test_search_bracket_error_exit_one(tmp_path, capsys):
    # a supercritical mass blows up quickly at tiny amplitudes
    cfg = write_cfg(
        tmp_path / "c.json",
        experiment={"kind": "SuppressionThreshold"},
        flow={"kind": "hyperbolic", "amplitude": 1.0},
        model={"kind": "pks"},
        grid={"dim": 2, "n": 64, "half_length": 4.0},
        time={"t_end": 0.5, "dt_max": 0.01, "adaptive_box": False},
        initial={"mass": 3 * 8 * math.pi, "sigma": 0.4},
        search={"A_lo": 0.0, "A_hi": 0.01},
    )
    assert main(["search", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "bracket" in capsys.readouterr().err


def test_kernel_check_csv(capsys):
    assert main(["kernel-check", "--times", "0.5", "--amplitudes", "1", "10"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "t,A,normalization_error,envelope_ratio,semigroup_error"
    rows = [list(map(float, ln.split(","))) for ln in lines[1:]]
    assert [r[1] for r in rows] == [1.0, 10.0]
    assert all(r[2] < 1e-8 and 0 < r[3] <= 1 for r in rows)


def test_oracle_agreement_and_disagreement(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", time={"t_end": 0.1, "dt_max": 0.01, "snapshot_times": [0.05, 0.1]})
    assert main(["oracle", "--config", cfg, "--tol", "0.01"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("t,mass_spectral") and len(out) == 3
    assert main(["oracle", "--config", cfg, "--tol", "1e-12"]) == 1
    assert "disagreement" in capsys.readouterr().err


def test_fit(tmp_path, capsys):
    recs = [dg.DiagRecord(i, t, t, 0.1, 1.0, 2 * t**-0.5, 1.0, 0.0, 0.0, 0.0)
            for i, t in enumerate(np.geomspace(1, 100, 25))]
    path = tmp_path / "r.csv"
    dg.write_records_csv(path, recs)
    assert main(["fit", "--records", str(path), "--tmin", "1", "--tmax", "100"]) == 0
    val = float(capsys.readouterr().out.strip().split("=")[1])
    assert val == pytest.approx(-0.5, abs=1e-12)
    assert main(["fit", "--records", str(path), "--tmin", "1", "--tmax", "2"]) == 2


def test_missing_subcommand():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


@pytest.mark.skipif(shutil.which("fastspread") is None, reason="console script not installed")
def test_console_script_help():
    res = subprocess.run(["fastspread", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "kernel-check", "search", "oracle", "fit"):
        assert cmd in res.stdout
