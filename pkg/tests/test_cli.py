from __future__ import annotations

import json

import numpy as np
import pytest

import lolnmpc.model
from lolnmpc import cli
from lolnmpc.bench import ScenarioMatrix


def test_run_writes_log_and_summary(tmp_path, capsys):
    code = cli.main(["run", "--traj", "fig8", "--g", "2.5", "--controller", "lol",
                     "--duration", "0.3", "--out", str(tmp_path), "--seed", "4"])
    assert code == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "rmse" in out and "clip events" in out
    csv_path = tmp_path / "fig8_2.5g_lol_seed4.csv"
    meta = json.loads((tmp_path / "fig8_2.5g_lol_seed4.json").read_text())
    assert csv_path.is_file()
    assert meta["seed"] == 4
    assert meta["controller"] == "LolNmpc"


def test_run_standard_metadata(tmp_path):
    code = cli.main(["run", "--traj", "hover", "--controller", "standard", "--motor-variant", "speed",
                     "--duration", "0.2", "--out", str(tmp_path), "--noise", "none"])
    assert code == cli.EXIT_OK
    (meta_path,) = tmp_path.glob("*.json")
    meta = json.loads(meta_path.read_text())
    assert meta["controller"] == "StandardNmpc"
    assert meta["controller_params"]["motor_variant"] == "speed"
    assert meta["plant"]["noise_std"] == [0.0, 0.0, 0.0, 0.0]


def test_missing_vehicle_is_config_error(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code = cli.main(["run", "--traj", "fig8", "--vehicle", str(missing), "--out", str(tmp_path)])
    assert code == cli.EXIT_CONFIG
    assert str(missing) in capsys.readouterr().err


def test_unknown_trajectory_is_config_error(tmp_path):
    assert cli.main(["run", "--traj", "square", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_config_file_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"traj": "fig8", "colour": "red"}))
    assert cli.main(["run", "--config", str(cfg)]) == cli.EXIT_CONFIG


def test_bench_respects_thread_cap(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LOLNMPC_THREADS", "1")
    code = cli.main(["bench", "--traj", "fig8", "--g", "2.5", "--reps", "1", "--duration", "0.2",
                     "--jobs", "4", "--out", str(tmp_path)])
    assert code == cli.EXIT_OK
    captured = capsys.readouterr()
    assert "1 worker(s)" in captured.err
    assert "fig8" in captured.out
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["summary"]["pairs"] == 1
    assert (tmp_path / "timing.json").is_file()


def test_bench_missing_matrix_is_config_error(tmp_path):
    assert cli.main(["bench", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG


def test_default_matrix_has_six_pairs():
    m = ScenarioMatrix.load(cli.default_matrix_path())
    pairs = {(s.shape, s.g_level) for s in m.scenarios}
    assert len(pairs) == 6
    assert all(s.repetitions == 5 for s in m.scenarios)


def test_selftest_single_check(capsys):
    assert cli.main(["selftest", "--only", "hover_trim"]) == cli.EXIT_OK
    assert "[PASS] hover_trim" in capsys.readouterr().out


def test_selftest_detects_flipped_gain_sign(monkeypatch, capsys):
    original = lolnmpc.model.pid_torque

    def flipped(omega_c, omega, z, params):
        tau, dz = original(omega_c, omega, z, params)
        return tau - 2 * np.asarray(params.k_p) * dz, dz

    monkeypatch.setattr(lolnmpc.model, "pid_torque", flipped)
    code = cli.main(["selftest", "--only", "rk4_sensitivities"])
    assert code == cli.EXIT_FAILURE
    out = capsys.readouterr().out
    assert "[FAIL] rk4_sensitivities" in out
    assert "failed: rk4_sensitivities" in out
