import json

import pytest

from kimura_lab.cli import main

MODEL_HALF = {
    "kind": "standard",
    "dims": {"n": 1, "m": 0},
    "b_hat": [{"family": "constant", "value": 0.5}],
}


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(tmp_path, doc, *extra):
    cfg = write_config(tmp_path, doc)
    out = tmp_path / "out"
    return main(["--config", cfg, "--out", str(out), *extra]), out


def test_validate_reports_unit_ellipticity(tmp_path, capsys):
    doc = {"command": "validate", "seed": 1, "model": MODEL_HALF}
    code, out = run(tmp_path, doc)
    assert code == 0
    results = json.loads((out / "results.json").read_text())
    assert results["passed"] is True
    assert results["delta"] == pytest.approx(1.0)
    assert "config=" in capsys.readouterr().out


def test_fk_unit_payoff_full_space(tmp_path):
    doc = {
        "command": "fk",
        "seed": 7,
        "model": MODEL_HALF,
        "z0": [0.0],
        "t": 0.2,
        "f": "one",
        "sim": {"dt": 0.002, "n_paths": 3000, "horizon": 0.2},
    }
    code, out = run(tmp_path, doc)
    assert code == 0
    results = json.loads((out / "results.json").read_text())
    assert results["estimate"]["value"] == 1.0
    assert results["estimate"]["seed"] == 7


def test_missing_seed_is_config_error(tmp_path, capsys):
    doc = {"command": "validate", "model": MODEL_HALF}
    code, _ = run(tmp_path, doc)
    assert code == 2
    err = capsys.readouterr().err
    assert "seed" in err


def test_unknown_command_rejected(tmp_path):
    doc = {"command": "frobnicate", "seed": 1, "model": MODEL_HALF}
    code, _ = run(tmp_path, doc)
    assert code == 2


def test_command_mismatch_rejected(tmp_path):
    doc = {"command": "validate", "seed": 1, "model": MODEL_HALF}
    cfg = write_config(tmp_path, doc)
    code = main(["fk", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == 2


def test_seed_override_changes_hash(tmp_path):
    doc = {
        "command": "fk",
        "seed": 7,
        "model": MODEL_HALF,
        "z0": [0.0],
        "t": 0.1,
        "sim": {"dt": 0.002, "n_paths": 500, "horizon": 0.1},
    }
    cfg = write_config(tmp_path, doc)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["--config", cfg, "--out", str(out1)]) == 0
    assert main(["--config", cfg, "--out", str(out2), "--seed", "8"]) == 0
    r1 = json.loads((out1 / "results.json").read_text())
    r2 = json.loads((out2 / "results.json").read_text())
    assert r1["config_hash"] != r2["config_hash"]
    assert r2["seed"] == 8


def test_simulate_writes_bundle(tmp_path):
    doc = {
        "command": "simulate",
        "seed": 3,
        "model": MODEL_HALF,
        "z0": [0.0],
        "sim": {"dt": 0.01, "n_paths": 200, "horizon": 0.1},
        "output": {"bundle": "paths.kimb", "csv": "paths.csv"},
    }
    code, out = run(tmp_path, doc)
    assert code == 0
    assert (out / "paths.kimb").exists()
    assert (out / "paths.csv").exists()
    from kimura_lab.simulate import read_kimb

    back = read_kimb(str(out / "paths.kimb"))
    assert back["states"].shape[0] == 200


def test_thread_count_does_not_change_artifacts(tmp_path):
    doc = {
        "command": "fk",
        "seed": 11,
        "model": MODEL_HALF,
        "z0": [0.0],
        "t": 0.2,
        "f": {"exp-neg": 0},
        "sim": {"dt": 0.002, "n_paths": 9000, "horizon": 0.2},
    }
    cfg = write_config(tmp_path, doc)
    outs = []
    for threads, sub in ((1, "t1"), (3, "t3")):
        out = tmp_path / sub
        assert main(["--config", cfg, "--out", str(out), "--threads", str(threads)]) == 0
        outs.append((out / "results.json").read_bytes())
    assert outs[0] == outs[1]


def test_env_var_thread_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("KIMURA_LAB_THREADS", "2")
    doc = {
        "command": "fk",
        "seed": 5,
        "model": MODEL_HALF,
        "z0": [0.0],
        "t": 0.1,
        "sim": {"dt": 0.002, "n_paths": 500, "horizon": 0.1},
    }
    code, out = run(tmp_path, doc)
    assert code == 0


def test_oracle_compare_small_run(tmp_path):
    doc = {
        "command": "oracle-compare",
        "seed": 9,
        "b0": 0.5,
        "t": 1.0,
        "bins": 32,
        "sim": {"n_paths": 40000, "dt": 0.01, "scheme": "exact-1d-gamma"},
    }
    code, out = run(tmp_path, doc)
    assert code == 0
    results = json.loads((out / "results.json").read_text())
    assert results["l1_pass"] is True
    assert results["mean_within_3_stderr"] is True


def test_numeric_failure_exit_code(tmp_path, capsys):
    doc = {
        "command": "simulate",
        "seed": 2,
        "model": {
            "kind": "standard",
            "dims": {"n": 1, "m": 0},
            "b_hat": [{"family": "constant", "value": float("nan")}],
        },
        "z0": [0.0],
        "sim": {"dt": 0.01, "n_paths": 16, "horizon": 0.05},
    }
    code, _ = run(tmp_path, doc)
    assert code == 3
    assert "numeric" in capsys.readouterr().err


def test_density_command_writes_csv(tmp_path):
    doc = {
        "command": "density",
        "seed": 21,
        "model": MODEL_HALF,
        "z0": [0.0],
        "t": 0.5,
        "grid": {"box": [[0.0, 6.0]], "cells": 16},
        "measure": "operator",
        "sim": {"dt": 0.005, "n_paths": 4000, "horizon": 0.5},
    }
    code, out = run(tmp_path, doc)
    assert code == 0
    results = json.loads((out / "results.json").read_text())
    assert results["survival_mass"] == 1.0
    lines = (out / "density.csv").read_text().strip().splitlines()
    assert lines[0] == "c0,cell_mu,density"
    assert len(lines) == 17


def test_harnack_command_writes_ratio_csv(tmp_path):
    doc = {
        "command": "harnack",
        "seed": 23,
        "model": {
            "kind": "singular",
            "dims": {"n": 1, "m": 0},
            "b": [{"family": "constant", "value": 0.5}],
        },
        "domain": {
            "dims": {"n": 1, "m": 0},
            "box": [[0.0, 4.0]],
            "shape": "box",
        },
        "z0": [2.0],
        "s": 0.5,
        "z": [2.0],
        "R": 0.25,
        "rho_fractions": [0.2, 0.4],
        "lattice": {"n_time": 2, "n_space": 3},
        "sim": {"dt": 0.004, "n_paths": 1500, "horizon": 1.0},
    }
    code, out = run(tmp_path, doc)
    assert code == 0
    results = json.loads((out / "results.json").read_text())
    assert len(results["reports"]) == 2
    lines = (out / "harnack.csv").read_text().strip().splitlines()
    assert lines[0] == "rho,ratio"
    assert len(lines) == 3


def test_girsanov_command_consistency(tmp_path):
    doc = {
        "command": "girsanov",
        "seed": 29,
        "model": {
            "kind": "standard",
            "dims": {"n": 1, "m": 0},
            "b_hat": [{"family": "affine", "c0": 1.0, "coeffs": [0.2]}],
        },
        "z0": [1.0],
        "t": 0.5,
        "sim": {"dt": 0.002, "n_paths": 30000, "horizon": 0.5},
    }
    code, out = run(tmp_path, doc)
    assert code == 0
    results = json.loads((out / "results.json").read_text())
    assert results["within_3_stderr"] is True
    assert all(
        abs(v - 1.0) < 0.05 for v in results["mean_weight_by_time"].values()
    )
