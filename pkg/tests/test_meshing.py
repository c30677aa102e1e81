import numpy as np
import pytest

from endoneus.errors import InputError
from endoneus.meshing import Mesh, export_mesh, field_from_model, marching_cubes, parse_obj

from conftest import plane_model


def sphere(r):
    return lambda x: np.linalg.norm(x, axis=1) - r


def test_sphere_mesh_quality():
    mesh = marching_cubes(sphere(0.5), resolution=48)
    assert mesh.is_watertight()
    assert np.max(np.abs(np.linalg.norm(mesh.vertices, axis=1) - 0.5)) < 2e-3
    assert mesh.area() == pytest.approx(np.pi, rel=5e-3)
    # winding: face normals point outward (towards increasing f)
    v, t = mesh.vertices, mesh.triangles
    n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    assert np.all((n * v[t].mean(axis=1)).sum(axis=1) > 0)


def test_inverted_field_keeps_outward_winding():
    # f > 0 inside: normals still follow increasing f, i.e. point inward
    mesh = marching_cubes(lambda x: 0.5 - np.linalg.norm(x, axis=1), resolution=24)
    v, t = mesh.vertices, mesh.triangles
    n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    assert np.all((n * v[t].mean(axis=1)).sum(axis=1) < 0)


def test_empty_when_no_crossing():
    assert marching_cubes(lambda x: np.ones(len(x)), resolution=8).is_empty
    assert marching_cubes(sphere(5.0), resolution=8).is_empty


def test_bounds_and_resolution_validation():
    with pytest.raises(InputError):
        marching_cubes(sphere(0.5), resolution=7)
    with pytest.raises(InputError):
        marching_cubes(sphere(0.5), bounds=((0, 0, 0), (0, 1, 1)))


def test_model_plane_mesh():
    mesh = marching_cubes(field_from_model(plane_model(0.25)), resolution=16)
    np.testing.assert_allclose(mesh.vertices[:, 2], 0.25, atol=1e-9)
    assert mesh.area() == pytest.approx(4.0, rel=1e-9)


def test_obj_round_trip(tmp_path):
    mesh = marching_cubes(sphere(0.4), resolution=16)
    export_mesh(mesh, tmp_path / "m.obj")
    text = (tmp_path / "m.obj").read_text().splitlines()
    assert sum(1 for ln in text if ln.startswith("v ")) == len(mesh.vertices)
    faces = [ln for ln in text if ln.startswith("f ")]
    assert len(faces) == len(mesh.triangles)
    assert min(int(i) for ln in faces for i in ln.split()[1:]) == 1
    back = parse_obj(tmp_path / "m.obj")
    np.testing.assert_allclose(back.vertices, mesh.vertices, rtol=1e-8)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)


def test_mesh_validation():
    with pytest.raises(InputError):
        Mesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))
    with pytest.raises(InputError):
        Mesh(np.zeros((3, 2)), np.zeros((0, 3), dtype=int))
