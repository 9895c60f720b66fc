import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smoothrecon.pointcloud_io import (
    FormatError, SampleSet, TriangleMesh, fit_domain, load_mesh, load_samples,
    save_mesh, save_samples, to_grid, to_world,
)
from smoothrecon.synthetic import icosphere


def write(path, text):
    path.write_text(text)
    return path


ASCII_PLY = """ply
format ascii 1.0
comment three oriented points
element vertex 3
property float x
property float y
property float z
property float nx
property float ny
property float nz
element camera 1
property float focal
end_header
0 0 0 0 0 1
1 0 0 1 0 0
0 2 0 0 1 0
35.0
"""


def test_ascii_ply_in_file_order(tmp_path):
    s = load_samples(write(tmp_path / "a.ply", ASCII_PLY))
    np.testing.assert_array_equal(s.points, [[0, 0, 0], [1, 0, 0], [0, 2, 0]])
    np.testing.assert_array_equal(s.normals, [[0, 0, 1], [1, 0, 0], [0, 1, 0]])
    assert s.space == "world"


def test_xyz_line(tmp_path):
    s = load_samples(write(tmp_path / "a.xyz", "# header\n0 0 0 0 0 1\n\n"))
    np.testing.assert_array_equal(s.points, [[0, 0, 0]])
    np.testing.assert_array_equal(s.normals, [[0, 0, 1]])


def test_xyz_malformed_line_reported(tmp_path):
    path = write(tmp_path / "a.xyz", "0 0 0 0 0 1\n1 2 3\n")
    with pytest.raises(FormatError, match=":2:"):
        load_samples(path)


def test_xyz_const_normal_allows_positions_only(tmp_path):
    path = write(tmp_path / "a.xyz", "0 0 0\n1 1 1\n")
    s = load_samples(path, const_normal=(0, 0, 2))
    np.testing.assert_array_equal(s.normals, [[0, 0, 2]] * 2)


def test_zero_normals_rejected_and_counted(tmp_path, caplog):
    path = write(tmp_path / "a.xyz", "0 0 0 0 0 1\n1 1 1 0 0 0\n2 2 2 0 0 0\n")
    s = load_samples(path)
    assert len(s) == 1
    assert "rejected 2 samples" in caplog.text


def test_normals_kept_unless_normalized(tmp_path):
    path = write(tmp_path / "a.xyz", "0 0 0 0 0 3\n")
    assert load_samples(path).normals[0, 2] == 3
    assert load_samples(path, normalize=True).normals[0, 2] == 1


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_samples(tmp_path / "nope.ply")


def test_empty_file_names_path(tmp_path):
    path = write(tmp_path / "empty.xyz", "")
    with pytest.raises(FormatError, match="empty.xyz"):
        load_samples(path)


def test_truncated_binary_ply(tmp_path, rng):
    s = SampleSet(rng.normal(size=(10, 3)), rng.normal(size=(10, 3)))
    path = tmp_path / "s.ply"
    save_samples(s, path)
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(FormatError, match="truncated"):
        load_samples(path)


@given(st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_binary_ply_round_trip_bitwise(tmp_path_factory, n, seed):
    rng = np.random.default_rng(seed)
    s = SampleSet(rng.normal(size=(n, 3)) * 1e3, rng.normal(size=(n, 3)))
    path = tmp_path_factory.mktemp("rt") / "s.ply"
    save_samples(s, path)
    back = load_samples(path)
    np.testing.assert_array_equal(back.points, s.points)
    np.testing.assert_array_equal(back.normals, s.normals)


@pytest.mark.parametrize("name,binary", [("s.ply", False), ("s.xyz", True), ("s.obj", True)])
def test_text_sample_round_trips(tmp_path, rng, name, binary):
    s = SampleSet(rng.normal(size=(50, 3)), rng.normal(size=(50, 3)))
    save_samples(s, tmp_path / name, binary=binary)
    back = load_samples(tmp_path / name)
    np.testing.assert_array_equal(back.points, s.points)
    np.testing.assert_array_equal(back.normals, s.normals)


def test_single_triangle_obj(tmp_path):
    mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    save_mesh(mesh, tmp_path / "t.obj")
    lines = (tmp_path / "t.obj").read_text().splitlines()
    assert sum(1 for ln in lines if ln.startswith("v ")) == 3
    assert [ln for ln in lines if ln.startswith("f")] == ["f 1 2 3"]


@pytest.mark.parametrize("name", ["e.ply", "e.obj"])
def test_empty_mesh_is_valid_file(tmp_path, name):
    save_mesh(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))), tmp_path / name)
    back = load_mesh(tmp_path / name)
    assert back.n_vertices == 0 and back.n_triangles == 0


@pytest.mark.parametrize("name,binary", [("m.ply", True), ("m.ply", False), ("m.obj", True)])
def test_mesh_round_trip(tmp_path, name, binary):
    mesh = icosphere(1.3, 3)
    assert mesh.n_triangles > 1000
    save_mesh(mesh, tmp_path / name, binary=binary)
    back = load_mesh(tmp_path / name)
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)


def test_obj_polygons_and_negative_indices(tmp_path):
    text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\nf -4 -3 -1\n"
    mesh = load_mesh(write(tmp_path / "q.obj", text))
    np.testing.assert_array_equal(mesh.triangles, [[0, 1, 2], [0, 2, 3], [0, 1, 3]])


def test_mesh_bad_index_is_format_error(tmp_path):
    with pytest.raises(FormatError):
        load_mesh(write(tmp_path / "bad.obj", "v 0 0 0\nv 1 0 0\nf 1 2 9\n"))


def test_garbage_mesh(tmp_path):
    with pytest.raises(FormatError, match="not a PLY"):
        load_mesh(write(tmp_path / "g.ply", "garbage\n"))


@pytest.mark.skipif(os.geteuid() == 0, reason="root can write anywhere")
def test_unwritable_path(tmp_path):
    d = tmp_path / "ro"
    d.mkdir(mode=0o500)
    with pytest.raises(PermissionError):
        save_mesh(icosphere(1, 0), d / "m.ply")


def test_missing_directory_unwritable(tmp_path):
    with pytest.raises(PermissionError):
        save_mesh(icosphere(1, 0), tmp_path / "nope" / "m.ply")


# ---------------------------------------------------------------------------
# domain

def cube_samples():
    c = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    return SampleSet(c, np.ones_like(c))


def test_unit_cube_domain():
    t = fit_domain(cube_samples(), 64, 6)
    assert t.scale == pytest.approx(1 / 51, rel=1e-15)
    g = to_grid(cube_samples(), t).points
    np.testing.assert_allclose(g.min(axis=0), 6, atol=1e-12)
    np.testing.assert_allclose(g.max(axis=0), 57, atol=1e-12)


def test_single_point_goes_to_center():
    s = SampleSet([[3.0, -2.0, 7.0]] * 4, [[0, 0, 1]] * 4)
    t = fit_domain(s, 33)
    np.testing.assert_allclose(to_grid(s, t).points, 16.0, atol=1e-12)
    assert t.scale == pytest.approx(1 / 20)


def test_flat_axis_is_inflated(rng):
    p = rng.uniform(0, 2, size=(100, 3))
    p[:, 2] = 5.0
    s = SampleSet(p, np.ones_like(p))
    t = fit_domain(s, 64)
    g = to_grid(s, t).points
    assert np.all(g >= 6 - 1e-9) and np.all(g <= 57 + 1e-9)
    np.testing.assert_allclose(g[:, 2], 31.5)


def test_near_identity_for_grid_sized_data():
    c = cube_samples().points * 51 + 6
    t = fit_domain(SampleSet(c, np.ones_like(c)), 64, 6)
    assert t.scale == pytest.approx(1.0)
    np.testing.assert_allclose(t.origin, 0.0, atol=1e-12)


def test_origin_and_scaled_offsets_map_to_indices():
    t = fit_domain(cube_samples(), 64)
    g = t.to_grid_points(np.array([t.origin, t.origin + t.scale * np.array([10, 10, 10])]))
    np.testing.assert_allclose(g, [[0, 0, 0], [10, 10, 10]], atol=1e-12)


def test_resolution_too_small():
    with pytest.raises(ValueError, match="too small"):
        fit_domain(cube_samples(), 14, 6)


@given(st.integers(0, 2**32 - 1))
def test_round_trip_and_containment(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(50, 3)) * rng.uniform(0.01, 100) + rng.normal(size=3) * 10
    s = SampleSet(p, np.ones_like(p))
    t = fit_domain(s, (40, 48, 56), 6)
    g = to_grid(s, t)
    dims = np.array([40, 48, 56])
    assert np.all(g.points >= 6 - 1e-9) and np.all(g.points <= dims - 7 + 1e-9)
    back = to_world(g, t).points
    np.testing.assert_allclose(back, p, rtol=1e-12, atol=1e-12 * np.abs(p).max())


@given(st.integers(0, 2**32 - 1))
def test_similarity_equivariance(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(30, 3))
    s1 = SampleSet(p, np.ones_like(p))
    k, shift = rng.uniform(0.1, 10), rng.normal(size=3) * 5
    s2 = SampleSet(p * k + shift, np.ones_like(p))
    g1 = to_grid(s1, fit_domain(s1, 32)).points
    g2 = to_grid(s2, fit_domain(s2, 32)).points
    np.testing.assert_allclose(g1, g2, atol=1e-10)
