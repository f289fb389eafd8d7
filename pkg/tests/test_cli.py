"""Command-line interface tests: config validation, run artifacts, exit codes.

Everything runs through the public entry points (`parse_config`,
`serialize_config`, `run`, `main`) against temporary output directories;
determinism is checked byte-for-byte on the emitted CSV files.
"""

import copy
import json
from pathlib import Path

import numpy as np
import pytest

from qphelm import cli
from qphelm.errors import ConfigError

LATTICE = {"q_diag": [1.0, 1.0], "eta": [0.4, 0.7]}

GREEN_CFG = {
    "lattice": LATTICE,
    "wave": {"k_re": 1.3},
    "grid": {"n": 12, "exclusion_radius": 0.12},
}

DIRICHLET_CFG = {
    "lattice": LATTICE,
    "wave": {"k_re": 1.3},
    "geometry": {"shape": "circle", "params": {"radius": 0.35,
                                               "center": [0.5, 0.5]}, "N": 96},
    "problem": {"kind": "dirichlet", "a_flag": 0},
    "data": {"source": [0.5, 0.5]},
    "probes": [[0.08, 0.1], [0.9, 0.85], [0.5, 0.02], [0.06, 0.55], [0.93, 0.4]],
}

NEUMANN_CFG = {
    "lattice": LATTICE,
    "wave": {"k_re": 1.3},
    "geometry": {"shape": "ellipse", "params": {"a": 0.3, "b": 0.2,
                                                "center": [0.5, 0.5]}, "N": 64},
    "problem": {"kind": "neumann"},
    "data": {"coefficients": [[1.0, 0.0], [0.2, -0.1], [0.0, 0.5]]},
}

ROBIN_CFG = {
    "lattice": LATTICE,
    "wave": {"k_re": 1.3},
    "geometry": {"shape": "circle", "params": {"radius": 1.0},
                 "center": [0.5, 0.5], "epsilon": 0.05, "N": 96},
    "problem": {"kind": "robin",
                "nonlinearity": {"kind": "poly2",
                                 "params": {"offset": 1.0, "gamma": 0.5}}},
    "probes": [[1.65, 1.35], [1.6, 1.45]],
}

SWEEP_CFG = {
    "lattice": LATTICE,
    "wave": {"k_re": 1.3},
    "geometry": {"shape": "circle", "params": {"radius": 1.0},
                 "center": [0.5, 0.5],
                 "epsilon_sweep": [0.06, 0.03, 0.015], "N": 96},
    "problem": {"kind": "robin",
                "nonlinearity": {"kind": "poly2",
                                 "params": {"offset": 1.0, "gamma": 0.5}}},
    "probes": [[1.65, 1.35], [1.6, 1.45]],
}

RESCALING_CFG = {
    "lattice": LATTICE,
    "wave": {"k_re": 1.3},
    "geometry": {"shape": "kite", "params": {}, "center": [0.5, 0.5],
                 "epsilon_sweep": [0.1, 0.05], "N": 96},
    "problem": {"kind": "check-rescaling"},
    "probes": [[1.7, 1.3]],
}

ALL_CONFIGS = (GREEN_CFG, DIRICHLET_CFG, NEUMANN_CFG, ROBIN_CFG, SWEEP_CFG,
               RESCALING_CFG)


def _manifest(out_dir):
    return json.loads((Path(out_dir) / "run_manifest.json").read_text())


def test_config_round_trip():
    for obj in ALL_CONFIGS:
        cfg = cli.parse_config(json.dumps(obj))
        first = cli.serialize_config(cfg)
        second = cli.serialize_config(cli.parse_config(first))
        assert first == second


def test_config_rejects_unknown_keys():
    bad = copy.deepcopy(GREEN_CFG)
    bad["physics"] = {}
    with pytest.raises(ConfigError):
        cli.parse_config(bad)
    bad = copy.deepcopy(GREEN_CFG)
    bad["lattice"] = dict(LATTICE, tilt=0.1)
    with pytest.raises(ConfigError):
        cli.parse_config(bad)
    bad = copy.deepcopy(GREEN_CFG)
    bad["tolerances"] = {"sharpness": 1e-3}
    with pytest.raises(ConfigError):
        cli.parse_config(bad)


def test_config_validates_fields():
    bad = copy.deepcopy(DIRICHLET_CFG)
    bad["geometry"]["shape"] = "triangle"
    with pytest.raises(ConfigError):
        cli.parse_config(bad)
    bad = copy.deepcopy(DIRICHLET_CFG)
    bad["geometry"]["N"] = 63
    with pytest.raises(ConfigError):
        cli.parse_config(bad)
    bad = copy.deepcopy(DIRICHLET_CFG)
    bad["problem"]["a_flag"] = 2
    with pytest.raises(ConfigError):
        cli.parse_config(bad)
    with pytest.raises(ConfigError):
        cli.parse_config("not json {")
    bad = copy.deepcopy(GREEN_CFG)
    del bad["wave"]
    with pytest.raises(ConfigError):
        cli.parse_config(bad)


def test_green_eval_run_is_deterministic(tmp_path):
    cfg = cli.parse_config(json.dumps(GREEN_CFG))
    outs = []
    for name, threads in (("a", 1), ("b", 1), ("c", 4)):
        out = tmp_path / name
        assert cli.run("green-eval", cfg, out, threads=threads) == 0
        man = _manifest(out)
        assert man["status"] == "complete"
        assert "grid.csv" in man["outputs"]
        outs.append((out / "grid.csv").read_bytes())
    assert outs[0] == outs[1]  # rerun reproduces bytes
    assert outs[0] == outs[2]  # thread count does not change results

    header = outs[0].decode().splitlines()[0]
    assert header == "x,y,ReG,ImG"
    rows = outs[0].decode().splitlines()[1:]
    assert 0 < len(rows) < 144  # exclusion dropped the corner points
    assert _manifest(tmp_path / "a")["results"]["spectrum_distance"] > 0


def test_solve_dirichlet_run(tmp_path):
    cfg = cli.parse_config(json.dumps(DIRICHLET_CFG))
    assert cli.run("solve-dirichlet", cfg, tmp_path) == 0
    man = _manifest(tmp_path)
    assert man["status"] == "complete"
    assert set(man["outputs"]) == {"density.csv", "probes.csv"}
    res = man["results"]
    assert res["a_flag"] == 0
    assert res["condition_estimate"] < 1e3
    assert res["boundary_residual"] < 1e-10
    # manufactured data: probes carry reference values and a sup error
    assert res["sup_probe_error"] < 1e-8
    header = (tmp_path / "probes.csv").read_text().splitlines()[0]
    assert "ref_re" in header and "abs_err" in header
    dens_header = (tmp_path / "density.csv").read_text().splitlines()[0]
    assert dens_header == "t,mu_re,mu_im"


def test_solve_robin_run(tmp_path):
    cfg = cli.parse_config(json.dumps(ROBIN_CFG))
    assert cli.run("solve-robin", cfg, tmp_path) == 0
    man = _manifest(tmp_path)
    assert man["status"] == "complete"
    assert man["results"]["bc_defect"] < 1e-6
    assert "density.csv" in man["outputs"]


def test_check_rescaling_run(tmp_path):
    cfg = cli.parse_config(json.dumps(RESCALING_CFG))
    assert cli.run("check-rescaling", cfg, tmp_path) == 0
    text = (tmp_path / "rescaling.csv").read_text().splitlines()
    assert text[0] == "kind,epsilon,residual"
    body = [line.split(",") for line in text[1:]]
    # five kinds (probes given) at two epsilons
    assert len(body) == 10
    assert all(float(row[2]) < 1e-8 for row in body)


def test_resonant_wavenumber_exits_3(tmp_path):
    res = copy.deepcopy(GREEN_CFG)
    res["wave"]["k_re"] = float(np.hypot(0.4, 0.7))  # dual point at index 0
    cfg = cli.parse_config(json.dumps(res))
    assert cli.run("green-eval", cfg, tmp_path) == 3
    man = _manifest(tmp_path)
    assert man["status"] == "failed"
    assert man["outputs"] == []
    assert "error" in man


def test_oversized_epsilon_exits_2(tmp_path):
    bad = copy.deepcopy(ROBIN_CFG)
    bad["geometry"]["epsilon"] = 0.3  # beyond the validated radius 0.25
    cfg = cli.parse_config(json.dumps(bad))
    assert cli.run("solve-robin", cfg, tmp_path) == 2
    assert _manifest(tmp_path)["status"] == "failed"


def test_main_rejects_mismatched_problem_kind(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(DIRICHLET_CFG))
    with pytest.raises(SystemExit) as exc:
        cli.main(["solve-neumann", "--config", str(p),
                  "--out", str(tmp_path / "out")])
    assert exc.value.code == 2


def test_main_requires_config(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["solve-dirichlet", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_main_green_eval_end_to_end(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(GREEN_CFG))
    with pytest.raises(SystemExit) as exc:
        cli.main(["green-eval", "--config", str(p), "--out",
                  str(tmp_path / "out"), "--threads", "2", "--seed", "5"])
    assert exc.value.code == 0
    assert (tmp_path / "out" / "grid.csv").exists()


def test_selftest_passes(tmp_path):
    assert cli.run("selftest", None, tmp_path) == 0
    man = _manifest(tmp_path)
    assert man["status"] == "complete"
    report = (tmp_path / "selftest.txt").read_text()
    assert "PASS" in report and "FAIL" not in report
