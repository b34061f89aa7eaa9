import json

import numpy as np
import pytest
import scipy.io

from conflab.cli import main, multiplicity_groups
from conflab.mesh import load_gmsh, make_ball


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


BALL = {"mesh": {"kind": "ball", "level": 1}, "problem": {"bc": "robin", "s": 0.0, "n_eigs": 4},
        "seed": 0}


def test_mesh_make_round_trip(tmp_path):
    out = tmp_path / "ball.msh"
    assert main(["mesh", "make", "ball", "--level", "1", "--out", str(out)]) == 0
    mesh, _ = load_gmsh(out.read_text())
    ref = make_ball(1)
    np.testing.assert_array_equal(mesh.vertices, ref.vertices)
    np.testing.assert_array_equal(mesh.tets, ref.tets)


def test_spectrum_csv_and_determinism(tmp_path):
    cfg = write(tmp_path, "ball.json", BALL)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    ra, rb = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["spectrum", "--config", cfg, "--out", str(a), "--report", str(ra)]) == 0
    assert main(["--threads", "1", "spectrum", "--config", cfg, "--out", str(b),
                 "--report", str(rb)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert ra.read_bytes() == rb.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0] == "index,eigenvalue,residual"
    assert len(lines) == 5
    rep = json.loads(ra.read_text())
    assert rep["config"]["mesh"] == BALL["mesh"]


def test_steklov_csv_has_groups(tmp_path):
    cfg = write(tmp_path, "ball.json", BALL)
    out = tmp_path / "st.csv"
    assert main(["steklov", "--config", cfg, "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "index,eigenvalue,residual,multiplicity_group"
    assert [ln.split(",")[-1] for ln in lines[1:]] == ["0", "1", "1", "1"]


def test_multiplicity_groups():
    assert multiplicity_groups([0.5, 1.5, 1.51, 1.52, 2.5]) == [0, 1, 1, 1, 2]


def test_nodal_and_export(tmp_path):
    cfg = write(tmp_path, "ball.json", BALL)
    rep, vtk = tmp_path / "n.json", tmp_path / "n.vtk"
    assert main(["nodal", "--config", cfg, "--index", "2", "--report", str(rep), "--vtk", str(vtk)]) == 0
    assert json.loads(rep.read_text())["count"] == 2
    assert "SCALARS domain int" in vtk.read_text()
    d = tmp_path / "mm"
    assert main(["export", "matrix", "--config", cfg, "--out-dir", str(d)]) == 0
    A = scipy.io.mmread(str(d / "A.mtx"))
    assert A.shape[0] == len((d / "dofs.txt").read_text().split())


@pytest.mark.parametrize("cfg", [
    {"mesh": {"kind": "ball", "levl": 1}},
    {"mesh": {"kind": "ball"}, "extra": 1},
    {"mesh": {"kind": "ball"}, "problem": {"bc": "periodic"}},
    {"mesh": {"kind": "ball"}, "geometry": {"conformal": [{"expr": "x +* y"}]}},
    {"mesh": {"kind": "gmsh"}},
])
def test_config_errors_exit_2(tmp_path, cfg):
    path = write(tmp_path, "bad.json", cfg)
    assert main(["spectrum", "--config", path, "--out", str(tmp_path / "x.csv")]) == 2


def test_usage_errors_exit_2(tmp_path):
    assert main(["spectrum"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["spectrum", "--config", str(tmp_path / "missing.json"), "--out", "x.csv"]) == 2
    cfg = write(tmp_path, "ball.json", BALL)
    assert main(["spectrum", "--config", cfg]) == 2


def test_threads_env_fallback(tmp_path, monkeypatch):
    cfg = write(tmp_path, "ball.json", BALL)
    monkeypatch.setenv("CSL_THREADS", "2")
    assert main(["spectrum", "--config", cfg, "--out", str(tmp_path / "s.csv")]) == 0
    monkeypatch.setenv("CSL_THREADS", "many")
    assert main(["spectrum", "--config", cfg, "--out", str(tmp_path / "s.csv")]) == 2


def test_tau_ambiguity_exit_3(tmp_path):
    cfg = dict(BALL, problem={"bc": "robin", "s": 0.0, "n_eigs": 2, "tau": 0.2})
    path = write(tmp_path, "amb.json", cfg)
    # lambda_1 of the coarse ball is about 1.4, inside (tau/10, 10 tau]
    assert main(["spectrum", "--config", path, "--out", str(tmp_path / "s.csv")]) == 3


def test_verify_friedlander_exit_codes(tmp_path):
    cfg = write(tmp_path, "suite.json", {
        "experiment": {"cases": [
            {"name": "ball", "mesh": {"kind": "ball", "divisions": 6}},
            {"name": "cube", "mesh": {"kind": "box", "divisions": 4}},
            {"name": "shell", "mesh": {"kind": "shell", "divisions": 8}},
        ], "s_grid": [0.0, 1.0, 2.0]},
        "seed": 0})
    r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
    assert main(["verify", "friedlander", "--config", cfg, "--report", str(r1)]) == 0
    assert main(["verify", "friedlander", "--config", cfg, "--report", str(r2)]) == 0
    assert r1.read_bytes() == r2.read_bytes()
    rep = json.loads(r1.read_text())
    assert rep["verdict"] == "pass" and rep["config"]["run_config"]["seed"] == 0


def test_experiment_verdict_fail_exit_1(tmp_path):
    cfg = write(tmp_path, "mb.json", {"experiment": {"m": 1, "depth": 10.0, "divisions": [6]}})
    # too shallow: quotient positive -> ambiguous verdict, exit 3
    assert main(["experiment", "multibump", "--config", cfg]) == 3
    cfg = write(tmp_path, "cov.json", {"mesh": {"kind": "ball"},
                                       "experiment": {"divisions": [4, 4]}})
    assert main(["verify", "covariance", "--config", cfg]) == 1
