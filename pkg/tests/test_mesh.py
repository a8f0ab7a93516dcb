import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdgice.mesh import (
    GeometryField,
    InvalidGeometryError,
    build_line_mesh,
    build_triangulated_grid,
    cofactor,
    cofactor_derivative,
    determinant,
    generalized_cross,
    geometry_eval,
    is_valid,
    min_jacobian_determinants,
    scaled_normal,
    unit_normal,
)


def test_line_mesh_counts():
    mesh, geom = build_line_mesh(8, 0.0, 1.0)
    assert mesh.n_cells == 8
    assert mesh.n_facets == 9
    assert len(mesh.interior_facets) == 7
    assert len(mesh.boundary_facets) == 2
    mesh.check_invariants()
    assert geom.n_nodes == 9


def test_single_cell_line_mesh():
    mesh, _ = build_line_mesh(1, 0.0, 1.0)
    assert mesh.n_cells == 1
    assert len(mesh.boundary_facets) == 2
    assert mesh.tags() == {"left", "right"}


def test_line_mesh_uniform_widths():
    mesh, geom = build_line_mesh(10, 0.0, 1.0)
    X = geom.coords[geom.cell_nodes][:, :, 0]
    np.testing.assert_allclose(np.abs(X[:, 1] - X[:, 0]), 0.1, atol=1e-15)


def test_line_mesh_rejects_bad_input():
    with pytest.raises(ValueError):
        build_line_mesh(0, 0.0, 1.0)
    with pytest.raises(ValueError):
        build_line_mesh(3, 1.0, 1.0)


def test_triangulated_grid_counts():
    mesh, _ = build_triangulated_grid(10, 10)
    assert mesh.n_cells == 200
    mesh.check_invariants()
    mesh, _ = build_triangulated_grid(1, 1)
    assert mesh.n_cells == 2
    assert len(mesh.interior_facets) == 1


def test_triangulated_grid_area():
    mesh, _ = build_triangulated_grid(2, 1, (0.0, 2.0, 0.0, 1.0))
    assert mesh.n_cells == 4
    assert mesh.measure() == pytest.approx(2.0)


def test_triangulated_grid_tags():
    mesh, _ = build_triangulated_grid(3, 2, spacetime=True)
    assert mesh.tags() == {"left", "right", "bottom", "top"}
    assert mesh.is_spacetime
    assert len(mesh.facets_with_tag("bottom")) == 3
    assert len(mesh.facets_with_tag("left")) == 2


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3))
@settings(max_examples=25, deadline=None)
def test_grid_invariants_property(nx, ny, degree):
    mesh, geom = build_triangulated_grid(nx, ny, degree=degree)
    mesh.check_invariants()
    assert mesh.n_cells == 2 * nx * ny
    # Euler characteristic of a disc: V - E + F = 1
    assert len(mesh.vertices) - mesh.n_facets + mesh.n_cells == 1
    assert is_valid(geom)


def _affine_geom(A, b=(0.0, 0.0)):
    mesh, geom = build_triangulated_grid(1, 1)
    X = geom.ref_coords @ np.asarray(A).T + np.asarray(b)
    return geom.with_coords(X)


def test_geometry_eval_diagonal():
    geom = _affine_geom([[2.0, 0.0], [0.0, 3.0]])
    _, J, det, cof = geometry_eval(geom, 0, [0.25, 0.25])
    np.testing.assert_allclose(J, [[2, 0], [0, 3]], atol=1e-14)
    assert det == pytest.approx(6.0)
    np.testing.assert_allclose(cof, [[3, 0], [0, 2]], atol=1e-14)


def test_geometry_eval_identity():
    geom = _affine_geom(np.eye(2))
    x, J, det, cof = geometry_eval(geom, 1, [1 / 3, 1 / 3])
    np.testing.assert_allclose(J, np.eye(2), atol=1e-15)
    assert det == pytest.approx(1.0)
    np.testing.assert_allclose(cof, np.eye(2), atol=1e-15)


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_cofactor_identity(vals):
    J = np.array(vals).reshape(2, 2) + 4 * np.eye(2)
    np.testing.assert_allclose(cofactor(J) @ J.T, determinant(J) * np.eye(2), atol=1e-12)


def test_cofactor_3d_identity():
    rng = np.random.default_rng(3)
    J = rng.standard_normal((20, 3, 3))
    lhs = np.einsum("nij,nkj->nik", cofactor(J), J)
    np.testing.assert_allclose(lhs, np.linalg.det(J)[:, None, None] * np.eye(3), atol=1e-12)


def test_cofactor_derivative_matches_differences():
    rng = np.random.default_rng(4)
    for d in (2, 3):
        J = rng.standard_normal((d, d))
        D = cofactor_derivative(J)
        h = 1e-6
        for e in range(d):
            for m in range(d):
                E = np.zeros((d, d))
                E[e, m] = h
                fd = (cofactor(J + E) - cofactor(J - E)) / (2 * h)
                np.testing.assert_allclose(D[:, :, e, m], fd, atol=1e-8)


def test_scaled_normal_axis_aligned_edge():
    # facet from (0,0) to (0,2), left cell on the x < 0 side
    mesh, geom = build_triangulated_grid(1, 1, (-1.0, 0.0, 0.0, 2.0))
    f = mesh.facets_with_tag("right")[0]
    s = scaled_normal(geom, f, np.array([0.0, 0.5, 1.0]), unit_reference_tangent=False)
    np.testing.assert_allclose(s, [[2.0, 0.0]] * 3, atol=1e-14)


def test_scaled_normal_identity_is_reference_normal():
    mesh, geom = build_triangulated_grid(1, 1)
    for f in mesh.boundary_facets:
        s = scaled_normal(geom, f, np.array([0.3]))
        np.testing.assert_allclose(np.linalg.norm(s), 1.0)
        expected = {"left": [-1, 0], "right": [1, 0], "bottom": [0, -1], "top": [0, 1]}
        np.testing.assert_allclose(unit_normal(s)[0], expected[mesh.facet_tags[f]], atol=1e-14)


def test_scaled_normal_points_into_right_cell():
    mesh, geom = build_triangulated_grid(2, 2)
    centroid = geom.coords[geom.cell_nodes].mean(axis=1)
    for f in mesh.interior_facets:
        s = scaled_normal(geom, f, np.array([0.5]))[0]
        assert s @ (centroid[mesh.facet_right[f]] - centroid[mesh.facet_left[f]]) > 0


def test_scaled_normal_3d_cofactor_rule():
    # s = cof(A) s_hat for a planar facet mapped by A, against the cross product of mapped tangents
    rng = np.random.default_rng(5)
    for _ in range(10):
        A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        t = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        s_hat = generalized_cross(t)
        direct = np.cross(A @ t[0], A @ t[1])
        np.testing.assert_allclose(cofactor(A) @ s_hat, direct, atol=1e-12)
        np.testing.assert_allclose(generalized_cross((A @ t.T).T), direct, atol=1e-12)


def test_collapsed_facet_raises():
    mesh, geom = build_triangulated_grid(1, 1)
    X = geom.coords.copy()
    f = mesh.facets_with_tag("bottom")[0]
    a, b = mesh.facet_vertices[f]
    X[b] = X[a]
    with pytest.raises(InvalidGeometryError):
        scaled_normal(geom.with_coords(X), f, np.array([0.5]))


def test_curved_cell_validity():
    mesh, geom = build_triangulated_grid(1, 1, degree=2)
    assert is_valid(geom)
    X = geom.coords.copy()
    # pull an edge midpoint far across the opposite vertex
    mid = geom.cell_nodes[0, 3]
    X[mid] = X[mid] + 5.0 * (geom.coords[geom.cell_nodes[0]].mean(axis=0) - X[mid])
    assert not is_valid(geom, X)
    assert min_jacobian_determinants(geom, X).min() <= 0


@given(st.integers(1, 4))
def test_geometry_field_reproduces_affine_coordinates(degree):
    mesh, geom = build_line_mesh(3, -1.0, 2.0, degree=degree)
    x, J, det = geom.evaluate(np.array([[0.0], [0.3], [1.0]]))
    np.testing.assert_allclose(det, 1.0, atol=1e-12)
    assert x.min() == pytest.approx(-1.0)
    assert x.max() == pytest.approx(2.0)


def test_geometry_field_copy_is_independent():
    _, geom = build_line_mesh(2, 0.0, 1.0)
    g2 = geom.copy()
    g2.coords[1] = 0.7
    assert geom.coords[1, 0] == pytest.approx(0.5)
    assert isinstance(g2, GeometryField)
