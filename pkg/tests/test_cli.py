import json
import math
import os
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldforge.cli import EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, RunConfig, main, to_json


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def test_rld_solve_catenoid(capsys):
    code, out = run(capsys, "rld", "solve", "--background", "catenoid", "--kcirc", "4", "--sigma", "0")
    assert code == EXIT_OK
    data = json.loads(out)
    assert data["k"] == 2
    assert len(data["s"]) == 2 and len(data["F"]) == 2
    assert data["s"][0] == pytest.approx(0.2646, abs=1e-3)


def test_rld_solve_critical_window(capsys):
    code, out = run(capsys, "rld", "solve", "--background", "critical-catenoid", "--kcirc", "2", "--xi", "0")
    assert code == EXIT_OK
    s1 = json.loads(out)["s"][0]
    # between the root of the critical solution and the free boundary
    assert 0.5 < s1 < 1.1997


def test_shrinker_single_circle_infeasible(capsys):
    code, out = run(capsys, "rld", "solve", "--background", "shrinker", "--kcirc", "1")
    assert code == EXIT_INFEASIBLE
    err = json.loads(out)
    assert "k∘ < k∘_min" in err["reason"]
    assert err["exit_code"] == EXIT_INFEASIBLE


def test_usage_errors(capsys):
    assert main(["rld", "solve", "--background", "nowhere", "--kcirc", "2"]) == EXIT_USAGE
    capsys.readouterr()
    # argparse failures map to the usage exit code
    assert main(["rld", "solve", "--kcirc", "2"]) == EXIT_USAGE


def test_byte_identical_output(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert main(["rld", "solve", "--background", "shrinker", "--kcirc", "3", "--output", str(p)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_ode_profile_csv(capsys, tmp_path):
    path = tmp_path / "p.csv"
    code = main(["ode", "profile", "--background", "catenoid", "--s1", "2", "--n", "21", "--output", str(path)])
    assert code == EXIT_OK
    rows = path.read_text().splitlines()
    assert rows[0] == "s,phi,dphi"
    s, phi, _ = (float(v) for v in rows[-1].split(","))
    assert s == 2.0 and phi == pytest.approx(1 - 2 * math.tanh(2), abs=1e-9)


def test_rld_sweep(capsys):
    code, out = run(capsys, "rld", "sweep", "--background", "catenoid", "--kcirc-range", "1", "4", "--jobs", "2")
    assert code == EXIT_OK
    rows = json.loads(out)["results"]
    assert [r["kcirc"] for r in rows] == [1, 2, 3, 4]
    assert rows[0]["status"] == "Infeasible"
    assert all(r["status"] == "ok" for r in rows[1:])


def test_ld_mismatch_cross_check(capsys):
    code, out = run(capsys, "ld", "mismatch", "--background", "catenoid", "--kcirc", "4", "--m", "16",
                    "--cross-check")
    assert code == EXIT_OK
    assert json.loads(out)["route_gap"] < 1e-4


def test_clifford_phi(capsys):
    code, out = run(capsys, "clifford", "phi", "--k", "4", "--m", "16")
    assert code == EXIT_OK
    data = json.loads(out)
    assert data["identity_residual"] == pytest.approx(0.0, abs=1e-6)


def test_clifford_small_k_infeasible(capsys):
    code, _ = run(capsys, "clifford", "phi", "--k", "2", "--m", "16")
    assert code == EXIT_INFEASIBLE


def test_mesh_build_and_curvature(capsys, tmp_path):
    obj, csv = tmp_path / "s.obj", tmp_path / "h.csv"
    code, out = run(capsys, "mesh", "build", "--background", "sphere", "--kcirc", "2", "--m", "8",
                    "--ds", "0.4", "--out-obj", str(obj))
    assert code == EXIT_OK
    info = json.loads(out)
    assert info["euler_characteristic"] == -28
    code, out = run(capsys, "mesh", "curvature", "--input", str(obj), "--out-csv", str(csv))
    assert code == EXIT_OK
    assert csv.read_text().startswith("vertex_id,tag,H,residual")


def test_save_config_roundtrip(capsys, tmp_path):
    path = tmp_path / "cfg.json"
    main(["--save-config", str(path), "rld", "solve", "--background", "catenoid", "--kcirc", "4"])
    capsys.readouterr()
    cfg = RunConfig.from_json(path.read_text())
    assert cfg.subcommand == "rld solve" and cfg.kcirc == 4


@given(kcirc=st.integers(1, 40), sigma=st.lists(st.floats(-2, 2), max_size=4),
       zeta=st.floats(-3, 3), jobs=st.integers(1, 8))
@settings(max_examples=40, deadline=None)
def test_run_config_json_roundtrip(kcirc, sigma, zeta, jobs):
    cfg = RunConfig("rld solve", "catenoid", kcirc, sigma=sigma, zeta=zeta, jobs=jobs)
    back = RunConfig.from_json(cfg.to_json())
    assert back == cfg
    assert back.to_json() == cfg.to_json()


def test_to_json_deterministic_floats():
    text = to_json({"b": 1.0, "a": 0.1, "c": [math.nan]})
    assert text.index('"a"') < text.index('"b"')
    assert "0.10000000000000001" in text and "1.0" in text and "NaN" in text


def test_module_entry_point_pure_python(tmp_path):
    env = dict(os.environ, LDFORGE_PURE_PYTHON="1")
    res = subprocess.run([sys.executable, "-m", "ldforge", "rld", "solve", "--background", "catenoid",
                          "--kcirc", "4"], capture_output=True, text=True, env=env, timeout=120)
    assert res.returncode == 0
    assert json.loads(res.stdout)["k"] == 2
