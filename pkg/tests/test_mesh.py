import numpy as np
import pytest

from nrreg.errors import DegenerateInputError, FormatError, InvalidInputError
from nrreg.mesh import (NormalizationRecord, Surface, compute_normals,
                        edges_from_faces, error_colors, load_obj, load_ply,
                        load_surface, mean_edge_length, normalize_pair,
                        save_obj, save_ply, write_error_mesh)

from conftest import grid_mesh


def test_edges_from_faces_unique_sorted():
    faces = np.array([[0, 1, 2], [2, 1, 3]])
    e = edges_from_faces(faces)
    assert e.shape == (5, 2)
    assert np.all(e[:, 0] < e[:, 1])
    assert [1, 2] in e.tolist()


def test_surface_validation():
    with pytest.raises(InvalidInputError):
        Surface(np.zeros((3, 2)))
    with pytest.raises(InvalidInputError):
        Surface(np.zeros((3, 3)), faces=np.array([[0, 1, 5]]))
    with pytest.raises(InvalidInputError):
        Surface(np.zeros((3, 3)), edges=np.array([[1, 1]]))


def test_surface_edges_derived_from_faces():
    s = grid_mesh(3, 3)
    assert len(s.edges) == 16  # 12 axis-aligned + 4 diagonals
    assert s.edges.dtype == np.int64


def test_mean_edge_length_unit_square():
    s = grid_mesh(2, 2)
    # four sides of length 1 plus one diagonal
    assert mean_edge_length(s) == pytest.approx((4 + np.sqrt(2)) / 5)
    with pytest.raises(DegenerateInputError):
        mean_edge_length(Surface(np.zeros((2, 3))))


def test_normalize_pair_unit_diagonal_and_roundtrip():
    rng = np.random.default_rng(0)
    a = Surface(rng.normal(size=(40, 3)) * 3 + 10)
    b = Surface(rng.normal(size=(30, 3)) - 5)
    an, bn, rec = normalize_pair(a, b)
    pts = np.vstack([an.vertices, bn.vertices])
    diag = np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))
    assert diag == pytest.approx(1.0)
    assert np.allclose(an.vertices.mean(axis=0), 0.0)
    back = rec.denormalize(an.vertices, "source")
    assert np.allclose(back, a.vertices, atol=1e-12)
    back_t = rec.denormalize(rec.normalize(b.vertices, "target"), "target")
    assert np.allclose(back_t, b.vertices, atol=1e-12)
    with pytest.raises(InvalidInputError):
        rec.normalize(a.vertices, "nope")


def test_normalize_pair_degenerate():
    s = Surface(np.zeros((4, 3)))
    with pytest.raises(DegenerateInputError):
        normalize_pair(s, s.copy())


def test_mesh_normals_flat_grid():
    s = compute_normals(grid_mesh(5, 5, wavy=0.0))
    assert np.allclose(s.normals, [0.0, 0.0, 1.0], atol=1e-12)
    assert np.allclose(np.linalg.norm(s.normals, axis=1), 1.0)


def test_point_cloud_normals_sphere():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(200, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    s = compute_normals(Surface(pts))
    radial = np.einsum("ij,ij->i", s.normals, pts)
    # PCA normals are radial up to a global sign, consistently oriented
    assert np.all(np.abs(radial) > 0.95)
    assert len(np.unique(np.sign(radial))) == 1


def test_obj_roundtrip(tmp_path):
    s = grid_mesh(4, 3)
    p = tmp_path / "m.obj"
    save_obj(s, p)
    back = load_obj(p)
    assert np.allclose(back.vertices, s.vertices, atol=1e-8)
    assert np.array_equal(back.faces, s.faces)


def test_obj_fan_triangulation(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    s = load_obj(p)
    assert s.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_obj_bad_index_reports_line(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n")
    with pytest.raises(FormatError) as exc:
        load_obj(p)
    assert exc.value.line == 4


def test_obj_bad_coordinate(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 zero 0\n")
    with pytest.raises(FormatError):
        load_obj(p)


def test_ply_ascii_roundtrip(tmp_path):
    s = compute_normals(grid_mesh(3, 3))
    p = tmp_path / "m.ply"
    save_ply(s, p)
    back = load_ply(p)
    assert np.allclose(back.vertices, s.vertices, atol=1e-8)
    assert np.allclose(back.normals, s.normals, atol=1e-8)
    assert np.array_equal(back.faces, s.faces)


def test_ply_binary_roundtrip(tmp_path):
    s = grid_mesh(3, 4)
    p = tmp_path / "m.ply"
    save_ply(s, p, binary=True)
    back = load_ply(p)
    # float32 storage
    assert np.allclose(back.vertices, s.vertices, atol=1e-6)
    assert np.array_equal(back.faces, s.faces)


def test_ply_bad_magic(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_bytes(b"not a ply\n")
    with pytest.raises(FormatError):
        load_ply(p)


def test_load_surface_dispatch(tmp_path):
    s = grid_mesh(3, 3)
    save_obj(s, tmp_path / "m.obj")
    save_ply(s, tmp_path / "m.ply")
    assert load_surface(tmp_path / "m.obj").n_vertices == 9
    assert load_surface(tmp_path / "m.ply").n_vertices == 9
    with pytest.raises(InvalidInputError):
        load_surface(tmp_path / "m.stl")


def test_error_colors_ramp():
    c = error_colors([0.0, 0.5, 1.0])
    assert c.dtype == np.uint8
    assert c[0].tolist() == [0, 0, 255]
    assert c[2].tolist() == [255, 0, 0]
    assert np.all(c[:, 1] == 0)
    # all-zero field stays blue
    z = error_colors(np.zeros(4))
    assert np.all(z == [0, 0, 255])


def test_write_error_mesh(tmp_path):
    s = grid_mesh(3, 3)
    p = tmp_path / "err.ply"
    write_error_mesh(s, np.linspace(0, 1, s.n_vertices), p)
    text = p.read_text()
    assert "property uchar red" in text
    with pytest.raises(InvalidInputError):
        write_error_mesh(s, np.zeros(3), tmp_path / "bad.ply")
