import json

import numpy as np
import pytest

from mvsdde.cli import main
from mvsdde.csvio import read_ensemble_csv, read_rows, write_ensemble_csv
from mvsdde.empirical_law import SegmentEnsemble, w2_exact

CONFIG = """
[model]
kind = "linear_meanfield"
a_self = -0.5
b_delay = 0.3
c_mean = 0.4

[grid]
m = 4
dt = 0.25
T = 1.0

[solver]
N = 40
probe_trials = 5
probe_seeds = 2
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(CONFIG)
    return path


def test_unknown_subcommand_is_usage_error():
    assert main(["bogus"]) == 2


def test_missing_config_is_usage_error(tmp_path):
    assert main(["picard"]) == 2
    assert main(["picard", "--config", str(tmp_path / "absent.toml")]) == 2


def test_invalid_config_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(CONFIG.replace("dt = 0.25", "dt = 0"))
    assert main(["picard", "--config", str(bad)]) == 2
    assert "grid.dt" in capsys.readouterr().err


def test_w2_prints_one_number(tmp_path, capsys):
    rng = np.random.default_rng(0)
    a = SegmentEnsemble(1.0, 0.5, 2, rng.normal(size=(5, 3, 1)))
    b = SegmentEnsemble(1.0, 0.5, 2, rng.normal(size=(5, 3, 1)))
    write_ensemble_csv(a, tmp_path / "a.csv")
    write_ensemble_csv(b, tmp_path / "b.csv")
    assert main(["w2", str(tmp_path / "a.csv"), str(tmp_path / "b.csv"), "--metric", "sup"]) == 0
    out = capsys.readouterr().out.split()
    assert len(out) == 1
    assert float(out[0]) == pytest.approx(w2_exact(a, b), rel=1e-11)


def test_ensemble_csv_round_trip(tmp_path):
    a = SegmentEnsemble(1.0, 0.5, 2, np.random.default_rng(1).normal(size=(4, 3, 2)))
    write_ensemble_csv(a, tmp_path / "a.csv")
    back = read_ensemble_csv(tmp_path / "a.csv")
    assert np.allclose(back.values, a.values, rtol=1e-11, atol=0)


def run_dir(tmp_path, name, *argv):
    out = tmp_path / name
    assert main([*argv, "--out", str(out)]) == 0
    return out


def dir_bytes(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


@pytest.mark.parametrize("command", ["picard", "particles"])
def test_replay_is_byte_identical(tmp_path, config, command):
    first = run_dir(tmp_path, "a", command, "--config", str(config), "--seed", "7")
    second = run_dir(tmp_path, "b", command, "--config", str(config), "--seed", "7", "--workers", "4")
    assert dir_bytes(first) == dir_bytes(second)
    manifest = json.loads((first / "manifest.json").read_text())
    assert manifest["seed"] == 7 and "config.toml" in manifest["files"]


def test_picard_report_header(tmp_path, config):
    out = run_dir(tmp_path, "p", "picard", "--config", str(config))
    header, rows = read_rows(out / "picard_report.csv")
    assert header == ["iter", "flow_distance", "path_distance"] and rows
    header, _ = read_rows(out / "moments.csv")
    assert header == ["t", "mean_1", "sup_sq_moment", "lp_moment"]


def test_simulate_to_stdout(config, capsys):
    assert main(["simulate", "--config", str(config), "--dt-exponent", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "t,dim_index,value" and len(lines) == 1 + 9 + 8


def test_check_conditions(config, capsys):
    assert main(["check-conditions", "--config", str(config)]) == 0
    assert capsys.readouterr().out.startswith("condition,worst_margin,violating_trials,pass")


def test_check_bounds_coupled_runs(tmp_path, config):
    shifted = tmp_path / "shifted.toml"
    shifted.write_text(CONFIG + "\n[initial]\nvalue = 1.1\n")
    a = run_dir(tmp_path, "a", "picard", "--config", str(config))
    b = run_dir(tmp_path, "b", "picard", "--config", str(shifted))
    out = tmp_path / "bounds.csv"
    assert main(["check-bounds", str(a), str(b), "--out", str(out)]) == 0
    header, rows = read_rows(out)
    assert header == ["bound_name", "lhs", "stderr", "rhs", "margin", "pass"]
    assert [r[0] for r in rows] == ["moment_finite", "stability_finite"]
    assert all(r[-1] == "true" for r in rows)


def test_galerkin_outputs_and_stiffness_refusal(tmp_path, config):
    gcfg = tmp_path / "g.toml"
    gcfg.write_text(CONFIG.replace("linear_meanfield", "porous_medium").replace("dt = 0.25", "dt = 0.25")
                    + "\n[galerkin]\nn_modes = 4\nreplicas = 50\n")
    assert main(["galerkin", "--config", str(gcfg), "--out", str(tmp_path / "g")]) == 1
    fine = tmp_path / "fine.toml"
    fine.write_text(gcfg.read_text().replace("m = 4\ndt = 0.25", "m = 64\ndt = 0.015625"))
    out = run_dir(tmp_path, "g", "galerkin", "--config", str(fine), "--modes-sweep", "2,4")
    header, rows = read_rows(out / "galerkin_modes.csv")
    assert header == ["k", "lambda_k", "mean_cK", "var_ck", "var_ck_theory"] and len(rows) == 4
    header, rows = read_rows(out / "galerkin_sweep.csv")
    assert [r[0] for r in rows] == ["2", "4"]
