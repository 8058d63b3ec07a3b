from __future__ import annotations

import csv
import json

import pytest

from sntorsion.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main


def _summary(path):
    with open(path / "summary.csv") as fh:
        return {r["quantity"]: r["value"] for r in csv.DictReader(line for line in fh if not line.startswith("#"))}


def test_no_arguments_prints_usage(capsys):
    assert main([]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["bogus"], ["q-factor", "--mechanism", "nope"], ["simulate", "--seed", "-1"],
                                  ["repro"], ["ringup"]])
def test_usage_errors(argv, tmp_path):
    assert main([*argv, "--out", str(tmp_path)]) == EXIT_USAGE


def test_config_error_exit(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[pendulum]\ninertia_rz = -1\n")
    assert main(["optical-spring", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["optical-spring", "--config", "no-such-bundle", "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_numerical_error_exit(tmp_path):
    sig = tmp_path / "s.csv"
    noise = tmp_path / "n.csv"
    sig.write_text("freq_hz,psd\n1,1\n2,1\n")
    noise.write_text("freq_hz,psd\n1,0\n2,0\n")
    assert main(["time-to-detect", "--signal", str(sig), "--noise", str(noise), "--out", str(tmp_path / "o")]) \
        == EXIT_NUMERIC
    assert main(["time-to-detect", "--signal", str(sig), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_q_factor_gas(tmp_path, capsys):
    assert main(["q-factor", "--mechanism", "gas", "--config", "reference", "--out", str(tmp_path)]) == EXIT_OK
    printed = capsys.readouterr().out
    assert abs(float(printed.split("Q =")[1]) / 6.6e4 - 1) < 0.05
    q = float(_summary(tmp_path)["Q_gas"])
    assert abs(q / 6.6e4 - 1) < 0.05
    assert (tmp_path / "q_budget.csv").is_file()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["subcommand"] == "q-factor" and len(manifest["config_hash"]) == 64


def test_repro_optical_spring(tmp_path):
    assert main(["repro", "optical-spring", "--out", str(tmp_path)]) == EXIT_OK
    s = _summary(tmp_path)
    assert abs(float(s["relative_omega2_shift"]) / 2.0e-5 - 1) < 0.10
    assert abs(float(s["delta_f_hz"]) / 5.9e-9 - 1) < 0.15


def test_time_to_detect_from_files(tmp_path):
    sig = tmp_path / "s.csv"
    noise = tmp_path / "n.csv"
    sig.write_text("freq_hz,psd\n" + "".join(f"{k / 64},1\n" for k in range(1, 11)))
    noise.write_text("freq_hz,psd\n" + "".join(f"{k / 64},1\n" for k in range(1, 11)))
    out = tmp_path / "o"
    assert main(["time-to-detect", "--signal", str(sig), "--noise", str(noise), "--band", "0.046875", "0.046875",
                 "--out", str(out)]) == EXIT_OK
    assert float(_summary(out)["seconds"]) == pytest.approx(64.0)


def test_simulate_writes_trajectory_csv(tmp_path):
    argv = ["simulate", "--config", "desk", "--n-traj", "2", "--duration", "8", "--seed", "5", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    with open(tmp_path / "trajectory_0001.csv") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    assert lines[0].strip() == "t_s,theta_rad,theta_mean_rad,readout_rad,control_Nm"
    assert len(lines) == 1 + 8 * 128
    assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 5


def _snapshot(root):
    return {p.relative_to(root): p.read_bytes() for p in root.rglob("*") if p.is_file()}


def test_outputs_stay_inside_out_and_repeat_exactly(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["ringup", "--config", "desk", "--band-center", "0.6", "--band-width", "1.0",
                     "--n-traj", "4", "--duration", "64", "--seed", "9", "--out", str(out)]) == EXIT_OK
        runs.append(_snapshot(out))
    assert sorted(p.name for p in tmp_path.iterdir()) == ["run0", "run1"]
    a, b = runs
    assert set(a) == set(b)
    for name in a:
        if name.name != "manifest.json":
            assert a[name] == b[name]
    ma = json.loads(a[next(n for n in a if n.name == "manifest.json")])
    mb = json.loads(b[next(n for n in b if n.name == "manifest.json")])
    assert ma["config_hash"] == mb["config_hash"] and ma["seed"] == mb["seed"] == 9
    header = a[next(n for n in a if n.name == "ensemble.csv")].decode().splitlines()[1]
    assert header == "t_days,mean_asd,p16,p84"


def test_every_subcommand_runs(tmp_path):
    cases = [
        ["sn-potential", "--points", "41"],
        ["mutual-gravity", "--a-over-sigma", "10", "--points", "21"],
        ["spectrum", "--config", "upgrade_quadratic", "--points", "200"],
        ["noise-budget", "--points", "50"],
        ["optical-spring"],
        ["snr"],
    ]
    for i, argv in enumerate(cases):
        out = tmp_path / str(i)
        assert main([*argv, "--out", str(out)]) == EXIT_OK, argv
        assert (out / "manifest.json").is_file() and (out / "summary.csv").is_file()
