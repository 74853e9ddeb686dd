import numpy as np
import pytest
from hypothesis import given, strategies as st

from sobodelay.errors import InvalidArgumentError
from sobodelay.mesh import (
    Mesh,
    build_interval_mesh,
    build_unit_square_tri_mesh,
    cell_geometry,
    read_mesh,
    write_mesh,
)


@given(st.integers(1, 40))
def test_interval_mesh_counts_and_measure(n):
    mesh = build_interval_mesh(0.0, 1.0, n)
    assert mesh.n_vertices == n + 1
    assert mesh.n_cells == n
    assert mesh.cell_measures().sum() == pytest.approx(1.0, abs=1e-14)
    assert mesh.h == pytest.approx(1.0 / n)
    assert len(mesh.boundary_facets) == 2


@given(st.integers(1, 12))
def test_square_mesh_counts_and_orientation(n):
    mesh = build_unit_square_tri_mesh(n)
    assert mesh.n_vertices == (n + 1) ** 2
    assert mesh.n_cells == 2 * n * n
    _, _, det, _ = mesh.jacobians()
    assert np.all(det > 0)
    assert mesh.cell_measures().sum() == pytest.approx(1.0, abs=1e-13)
    assert len(mesh.boundary_facets) == 4 * n
    assert mesh.h == pytest.approx(np.sqrt(2) / n)


def test_boundary_normals_point_outward():
    mesh = build_unit_square_tri_mesh(3)
    centre = np.array([0.5, 0.5])
    for cell, lf, normal in mesh.boundary_facets:
        verts = mesh.vertices[mesh.cells[cell]]
        facet_mid = np.delete(verts, lf, axis=0).mean(axis=0)
        assert np.linalg.norm(normal) == pytest.approx(1.0)
        assert normal @ (facet_mid - centre) > 0


def test_interval_normals():
    mesh = build_interval_mesh(-1.0, 2.0, 4)
    normals = sorted(float(n[0]) for _, _, n in mesh.boundary_facets)
    assert normals == [-1.0, 1.0]


def test_cell_geometry_maps_reference_vertices():
    mesh = build_unit_square_tri_mesh(2)
    geo = cell_geometry(mesh, 3)
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose([geo.map(r) for r in ref], mesh.vertices[mesh.cells[3]])
    with pytest.raises(InvalidArgumentError):
        cell_geometry(mesh, 99)


@pytest.mark.parametrize("bad", [0, -3, 2.5])
def test_bad_cell_counts(bad):
    with pytest.raises(InvalidArgumentError):
        build_interval_mesh(0.0, 1.0, bad)
    with pytest.raises(InvalidArgumentError):
        build_unit_square_tri_mesh(bad)


def test_mesh_text_round_trip(tmp_path):
    mesh = build_unit_square_tri_mesh(3)
    path = tmp_path / "sq.mesh"
    write_mesh(mesh, path)
    back = read_mesh(path)
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.cells, mesh.cells)
    assert back.h == mesh.h


def test_mesh_arrays_are_read_only():
    mesh = build_interval_mesh(0.0, 1.0, 2)
    with pytest.raises(ValueError):
        mesh.vertices[0] = 5.0
    assert isinstance(mesh, Mesh)
