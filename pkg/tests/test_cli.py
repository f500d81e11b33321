import json
from pathlib import Path

import numpy as np
import pytest

from returnctrl.cli import main
from returnctrl.config import from_dict, load_config, with_overrides
from returnctrl.errors import ParameterError
from returnctrl.io import read_field_binary

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL_OBSTRUCTION = """
command = "demo-obstruction"
seed = 7
[obstruction]
nx = 30
nt = 40
n_controls = 3
"""


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def summary(out):
    return json.loads((out / "summary.json").read_text())


def test_shipped_configs_load():
    for path in CONFIGS.glob("*.toml"):
        load_config(path).validate()


def test_delta_out_of_range_exit_2(tmp_path, capsys):
    code = main(["build-trajectory", "--delta", "0.2", "--out", str(tmp_path)])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ParameterError"
    assert json.loads((tmp_path / "error.json").read_text())["exit_code"] == 2


def test_large_epsilon_exit_3(tmp_path, capsys):
    code = main(["build-trajectory", "--bump-epsilon", "0.3", "--out", str(tmp_path)])
    assert code == 3
    msg = json.loads(capsys.readouterr().err)["message"]
    assert "remainder" in msg and "band_ok" in msg


def test_picard_cap_exit_4(tmp_path):
    cfg = write(tmp_path, 'command = "run-nonlinear"\nprofile = "desk"\n[nonlinear]\nmax_iter = 1\n')
    assert main(["run-nonlinear", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4
    err = json.loads((tmp_path / "o" / "error.json").read_text())
    assert err["error"] == "ConvergenceError" and len(err["history"]) == 1


@pytest.mark.parametrize("text", ["seed = -1", "profile = 'bench'", "[grid]\nnx = 'many'", "[grid]\ncolour = 1",
                                  "not toml ==="])
def test_bad_config_exit_2(tmp_path, text):
    cfg = write(tmp_path, text)
    assert main(["demo-obstruction", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_thread_count_validated(tmp_path, monkeypatch):
    monkeypatch.setenv("RETURNCTRL_THREADS", "0")
    cfg = write(tmp_path, SMALL_OBSTRUCTION)
    assert main(["demo-obstruction", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_obstruction_reproducible_across_threads(tmp_path, monkeypatch):
    cfg = write(tmp_path, SMALL_OBSTRUCTION)
    assert main(["demo-obstruction", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("RETURNCTRL_THREADS", "3")
    assert main(["demo-obstruction", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    a, b = summary(tmp_path / "a"), summary(tmp_path / "b")
    a.pop("config"), b.pop("config")
    assert a == b and a["gap_nonnegative"]
    assert main(["demo-obstruction", "--config", str(cfg), "--seed", "8", "--out", str(tmp_path / "c")]) == 0
    assert summary(tmp_path / "c")["per_control_min_gap"] != a["per_control_min_gap"]


def test_build_trajectory_desk_artifacts(tmp_path):
    out = tmp_path / "o"
    assert main(["build-trajectory", "--config", str(CONFIGS / "desk.toml"), "--out", str(out), "--csv"]) == 0
    s = summary(out)
    assert s["zero_outside"] and s["u_defect_max"] < 1e-6
    for name in ("residual_report.json", "k_reference.dat", "k_support.gp", "metadata.json",
                 "fields/u_bar.bin", "fields/u_bar.bin.json", "fields/h_bar.csv", "profiles/G.csv"):
        assert (out / name).exists(), name
    u = read_field_binary(out / "fields" / "u_bar.bin")
    assert u.values.shape == (401, 200)


def test_solve_control_zero_data(tmp_path):
    cfg = write(tmp_path, 'command = "solve-control"\n[control]\nalpha_amplitude = 0.0\npenalties = [1e-4]\n'
                          'penalty_epsilon = 1e-4\n')
    out = tmp_path / "o"
    assert main(["solve-control", "--config", str(cfg), "--out", str(out)]) == 0
    h = read_field_binary(out / "fields" / "h.bin")
    assert np.all(h.values == 0)
    assert (out / "penalty_sweep.csv").read_text().count("\n") == 2


def test_solve_control_summary_deterministic(tmp_path):
    cfg = write(tmp_path, 'command = "solve-control"\n[control]\npenalties = [1e-3, 1e-5]\npenalty_epsilon = 1e-5\n')
    for name in ("a", "b"):
        assert main(["solve-control", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    a, b = summary(tmp_path / "a"), summary(tmp_path / "b")
    a["config"].pop("out"), b["config"].pop("out")
    assert a == b


def test_observability_decoupled_reports_divergence(tmp_path):
    cfg = write(tmp_path, 'command = "observability"\n[observability]\nn_samples = 2\ndecouple = true\n')
    assert main(["observability", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    s = summary(tmp_path / "o")
    assert s["samples"]["diverges"] and s["relative_change"] is None


def test_overrides():
    cfg = from_dict({}, "solve-control")
    cfg = with_overrides(cfg, seed=3, penalty_epsilon=1e-6, s=0.01, grid=(50, 60), kind="quadratic-complex")
    assert (cfg.seed, cfg.control.penalty_epsilon, cfg.nonlinear.penalty_epsilon) == (3, 1e-6, 1e-6)
    assert (cfg.grid.nx, cfg.grid.nt, cfg.control.s, cfg.trajectory.kind) == (50, 60, 0.01, "quadratic-complex")
    with pytest.raises(ParameterError):
        with_overrides(cfg, seed=2**64).validate()


def test_profiles_default_by_command():
    assert from_dict({}, "build-trajectory").grid.auto
    assert from_dict({}, "run-nonlinear").trajectory.bump_epsilon == 0.3
