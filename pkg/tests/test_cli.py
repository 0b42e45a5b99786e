"""Command-line interface: exit codes, outputs and reproducibility."""

from __future__ import annotations

import json
import subprocess
import sys

import pytest

from withprofit.cli import main
from withprofit.config import example_config_path

FAST = ["--step", "0.1", "--scenarios", "6", "--chunk", "3"]


def _config(tmp_path, *replacements):
    text = example_config_path().read_text(encoding="utf-8")
    for old, new in replacements:
        assert old in text
        text = text.replace(old, new)
    path = tmp_path / "run.toml"
    path.write_text(text, encoding="utf-8")
    return path


def test_validate_only(capsys):
    assert main(["--validate-only"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["valid"] and info["states"] == 8 and info["step"] == 0.01
    assert "0-4" in info["market_rates"] and info["premium"] == 46409.96


def test_invalid_configuration_exit_code(tmp_path, capsys):
    assert main(["--validate-only", "--step", "0.03"]) == 1
    assert "does not divide" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "none.toml")]) == 1
    path = _config(tmp_path, ("sigma = 0.015384", "sigma = -0.015384"))
    assert main(["--config", str(path), "--validate-only"]) == 1
    assert "esg.sigma" in capsys.readouterr().err


def test_numerical_error_exit_code(tmp_path, capsys):
    # a surrender intensity of 500 per year cannot be integrated with h = 0.1
    path = _config(tmp_path, ('"0-3" = [{ family = "linear_time", a = 0.06, b = -0.002, end = 25.0 }]',
                              '"0-3" = [{ family = "constant", a = 500.0, end = 25.0 }]'))
    assert main(["--config", str(path), "--output-dir", str(tmp_path / "o")] + FAST) == 2
    assert "reduce the step size" in capsys.readouterr().err


def test_run_writes_summary(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(FAST + ["--output-dir", str(out), "--export-paths"]) == 0
    text = capsys.readouterr().out
    assert "V^b(0) general" in text and "relative difference" in text
    rec = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert rec["N"] == 6 and rec["h"] == 0.1
    for mode in ("general", "state-independent"):
        r = rec["results"][mode]
        assert r["Vb"] > 0 and r["Vb_se"] > 0 and r["min_pq"] >= -1e-10
    assert -1e5 < rec["V0"] < -1e4
    assert (out / "summary.txt").exists() and (out / "timing.json").exists()
    names = {p.name for p in out.iterdir()}
    for expected in ("scenario_00000.csv", "pq_00005.csv", "bonus_terms_00000.csv",
                     "assets_general_00000.csv", "assets_stateindep_00005.csv",
                     "cashflow_predetermined.csv", "cashflow_unit_bonus.csv"):
        assert expected in names
    header = (out / "pq_00000.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "t," + ",".join(f"pQ_{j}" for j in range(8))


def test_no_surplus_sharing_gives_zero_bonus(tmp_path, capsys):
    path = _config(tmp_path, ("kappa = 0.2", "kappa = 0.0"))
    out = tmp_path / "out"
    assert main(["--config", str(path), "--output-dir", str(out)] + FAST) == 0
    rec = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    for mode in ("general", "state-independent"):
        r = rec["results"][mode]
        assert r["Vb"] == 0.0 and r["Vb_se"] == 0.0 and r["Vb_unit_price"] == 0.0


def test_oracle_option(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["--step", "0.1", "--scenarios", "2", "--mode", "general", "--oracle",
                 "--oracle-paths", "2000", "--output-dir", str(out)]) == 0
    report = json.loads((out / "oracle.json").read_text(encoding="utf-8"))
    assert report["paths"] == 2000 and report["bonus_value_mc_se"] > 0
    assert (out / "oracle_pq.csv").exists()


@pytest.mark.parametrize("workers", [2, 3])
def test_summary_independent_of_worker_count(tmp_path, workers, capsys):
    args = ["--step", "0.1", "--scenarios", "10", "--chunk", "3"]
    a, b = tmp_path / "w1", tmp_path / f"w{workers}"
    assert main(args + ["--workers", "1", "--output-dir", str(a)]) == 0
    assert main(args + ["--workers", str(workers), "--output-dir", str(b)]) == 0
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "withprofit", "--validate-only"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0 and json.loads(proc.stdout)["valid"]
