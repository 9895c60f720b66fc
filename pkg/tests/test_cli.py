import subprocess
import sys
from argparse import Namespace

import numpy as np
import pytest

from smoothrecon import cli
from smoothrecon.meshing import is_watertight
from smoothrecon.pipeline import ReconConfig
from smoothrecon.pointcloud_io import load_mesh, load_samples, save_mesh
from smoothrecon.synthetic import icosphere


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def sphere_file(tmp_path, capsys):
    path = tmp_path / "sphere.ply"
    code, _, _ = run(capsys, "synth", "-o", path, "--shape", "sphere", "--n", 3000, "--seed", 4,
                     "--noise", 0.002)
    assert code == 0
    return path


def test_config_precedence(tmp_path):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("# comment\nlambda = 0.5\ngrid = 40\nenergy = 3  # trailing\n")
    args = cli.build_parser().parse_args(["reconstruct", "--config", str(cfg), "--grid", "48"])
    eff = cli.effective_config(args)
    assert eff.lam == 0.5 and eff.grid == 48 and eff.energy == 3
    assert eff.levels == ReconConfig().levels


def test_config_aliases_and_errors():
    got = cli.parse_config_text("narrow_band_radius = 2.5\nsmoothing_passes = 2\n"
                                "const_normal = 0,0,1\nclamp = false\n")
    assert got == {"narrow_band": 2.5, "passes": 2, "const_normal": (0.0, 0.0, 1.0),
                   "clamp": False}
    with pytest.raises(cli.ConfigError, match=":2:"):
        cli.parse_config_text("grid = 32\nbogus = 1\n")
    with pytest.raises(cli.ConfigError, match=":1:"):
        cli.parse_config_text("grid 32\n")


def test_echo_round_trip(tmp_path):
    cfg = ReconConfig(input="in.ply", output="out.obj", grid=(40, 48, 56), energy=2, lam=0.3,
                      narrow_band=3.0, const_normal=(0.0, 0.0, 1.0), clamp=False)
    back = cli.parse_config_text(cfg.echo())
    eff = cli.effective_config(Namespace(**{k: None for k in ReconConfig.field_names()},
                                         config=None))
    assert eff == ReconConfig()
    assert ReconConfig(**back) == cfg


@pytest.mark.parametrize("argv", [
    ["--lambda", "-1"], ["--energy", "5"], ["--grid", "4"], ["--levels", "0"],
    ["--const-normal", "0,0,0"],
])
def test_bad_values_exit_usage(capsys, tmp_path, sphere_file, argv):
    code, _, err = run(capsys, "reconstruct", "-i", sphere_file, "-o", tmp_path / "m.ply", *argv)
    assert code == cli.EXIT_USAGE
    assert "usage" in err or err.strip().count("\n") == 0


def test_missing_input_exit_io(capsys, tmp_path):
    code, _, err = run(capsys, "reconstruct", "-i", tmp_path / "none.ply", "-o", tmp_path / "m.ply")
    assert code == cli.EXIT_IO
    assert "none.ply" in err


def test_garbage_input_exit_io(capsys, tmp_path):
    bad = tmp_path / "bad.ply"
    bad.write_text("garbage\n")
    code, _, err = run(capsys, "reconstruct", "-i", bad, "-o", tmp_path / "m.ply")
    assert code == cli.EXIT_IO and "not a PLY" in err


def test_unwritable_output_exit_io(capsys, tmp_path, sphere_file):
    code, _, err = run(capsys, "reconstruct", "-i", sphere_file, "-o", tmp_path / "no" / "m.ply",
                       "--grid", 24, "--levels", 1)
    assert code == cli.EXIT_IO


def test_no_input_is_usage_error(capsys, tmp_path):
    code, _, _ = run(capsys, "reconstruct", "-o", tmp_path / "m.ply")
    assert code == cli.EXIT_USAGE


def test_reconstruct_sphere(capsys, tmp_path, sphere_file):
    out = tmp_path / "m.obj"
    code, _, err = run(capsys, "reconstruct", "-i", sphere_file, "-o", out, "--grid", 32,
                       "--levels", 2)
    assert code == 0
    mesh = load_mesh(out)
    assert is_watertight(mesh)
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert np.abs(r - 1).max() < 0.1
    for key in ("effective configuration", "lam = 0.2", "level=1", "level=0", "gamma=",
                "triangles=", "wall_time="):
        assert key in err


def test_tv_logs_irls(capsys, tmp_path, sphere_file):
    code, _, err = run(capsys, "reconstruct", "-i", sphere_file, "-o", tmp_path / "m.ply",
                       "--grid", 24, "--levels", 1, "--energy", 2, "--tv-max-outer", 3,
                       "--tol", 1e-4)
    assert code == 0
    assert "irls_outer=1" in err


def test_synth_deterministic(capsys, tmp_path):
    argv = ["--shape", "scene", "--n", 2000, "--seed", 7, "--noise", 0.01, "--outliers", 0.02,
            "--holes", "cap:+z:30deg", "--density-split", "x=0:0.02"]
    run(capsys, "synth", "-o", tmp_path / "a.ply", *argv)
    run(capsys, "synth", "-o", tmp_path / "b.ply", *argv)
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()


def test_synth_hole_and_split(capsys, tmp_path):
    code, _, _ = run(capsys, "synth", "-o", tmp_path / "s.xyz", "--shape", "sphere", "--n", 20000,
                     "--holes", "cap:+z:30deg", "--density-split", "x=0:0.02")
    assert code == 0
    p = load_samples(tmp_path / "s.xyz").points
    assert (p[:, 2] / np.linalg.norm(p, axis=1)).max() <= np.cos(np.radians(30))
    assert (p[:, 0] <= 0).sum() / (p[:, 0] > 0).sum() > 25


def test_synth_orientation(capsys, tmp_path):
    run(capsys, "synth", "-o", tmp_path / "s.ply", "--shape", "sphere", "--n", 100,
        "--orient", "halfspace:+x:-x")
    s = load_samples(tmp_path / "s.ply")
    np.testing.assert_array_equal(np.sign(s.normals[:, 0]), np.where(s.points[:, 0] >= 0, 1, -1))


def test_synth_bad_hole_argument(capsys, tmp_path):
    code, _, err = run(capsys, "synth", "-o", tmp_path / "s.ply", "--holes", "cap:+z")
    assert code == cli.EXIT_USAGE and "hole" in err


def test_metrics_command(capsys, tmp_path):
    mesh = icosphere(1.0, 3)
    save_mesh(mesh, tmp_path / "ico.ply")
    pts = tmp_path / "p.xyz"
    np.savetxt(pts, np.hstack([mesh.vertices * 1.01, mesh.vertices]))
    code, out, _ = run(capsys, "metrics", pts, tmp_path / "ico.ply", "--format", "tsv",
                       "--label", "ico")
    assert code == 0
    head, row = out.strip().splitlines()
    assert head.split("\t")[0] == "model"
    cols = dict(zip(head.split("\t"), row.split("\t")))
    assert cols["model"] == "ico" and int(cols["triangles"]) == 1280
    assert float(cols["rms"]) < 0.011
    assert float(cols["avg_mean"]) == pytest.approx(1.0, rel=0.1)


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "smoothrecon", "--help"], capture_output=True,
                         text=True, timeout=120)
    assert res.returncode == 0
    for cmd in ("reconstruct", "metrics", "synth"):
        assert cmd in res.stdout


def test_empty_input_names_file(capsys, tmp_path):
    empty = tmp_path / "empty.xyz"
    empty.write_text("")
    code, _, err = run(capsys, "reconstruct", "-i", empty, "-o", tmp_path / "m.ply")
    assert code != 0
    diag = [ln for ln in err.splitlines() if ln.startswith("smoothrecon:")]
    assert len(diag) == 1 and "empty.xyz" in diag[0]


def test_reconstruct_is_byte_reproducible(capsys, tmp_path, sphere_file):
    for name in ("a.ply", "b.ply"):
        code, _, _ = run(capsys, "reconstruct", "-i", sphere_file, "-o", tmp_path / name,
                         "--grid", 24, "--levels", 2)
        assert code == 0
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()


def test_config_file_drives_run(capsys, tmp_path, sphere_file):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"input = {sphere_file}\noutput = {tmp_path / 'm.ply'}\ngrid = 24\nlevels = 1\n")
    code, _, err = run(capsys, "reconstruct", "--config", cfg)
    assert code == 0 and (tmp_path / "m.ply").exists()
    echoed = err.split("effective configuration:\n", 1)[1]
    assert "grid = 24" in echoed and "levels = 1" in echoed


def test_main_restores_logging(capsys, tmp_path, sphere_file):
    import logging
    log = logging.getLogger("smoothrecon")
    before = log.handlers[:], log.level, log.propagate
    run(capsys, "reconstruct", "-i", sphere_file, "-o", tmp_path / "m.ply", "--grid", 24,
        "--levels", 1)
    assert (log.handlers[:], log.level, log.propagate) == before
