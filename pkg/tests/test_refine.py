import numpy as np
import pytest

from mdgice.assembly import Outflow
from mdgice.mesh import (
    GeometryField,
    ReferenceMesh,
    RefinementBudgetError,
    build_triangulated_grid,
    cell_aspect_ratios,
    is_valid,
    min_jacobian_determinants,
)
from mdgice.physics import AdvectionDiffusion
from mdgice.refine import project_cells_linear, split_edges, validity_check_and_refine
from mdgice.solver import Problem, SolverConfig


def _problem(mesh, degree=1, p=1):
    geom = GeometryField(mesh, degree)
    model = AdvectionDiffusion([1.0, 0.5], 1e-2)
    bcs = {t: Outflow() for t in mesh.tags()}
    return Problem(geom, model, p, bcs=bcs)


def _state(problem):
    return problem.disc.state_from_functions(lambda x: 1.0 + x[:, 0] - 2.0 * x[:, 1] ** 2)


def test_valid_isotropic_grid_is_unchanged():
    mesh, _ = build_triangulated_grid(3, 3)
    pr = _problem(mesh)
    state = _state(pr)
    pr2, st2, events = validity_check_and_refine(pr, state, SolverConfig())
    assert events == []
    assert pr2 is pr
    np.testing.assert_array_equal(st2.u, state.u)


def test_inverted_curved_cell_is_projected_without_split():
    mesh, _ = build_triangulated_grid(2, 2)
    pr = _problem(mesh, degree=2)
    state = _state(pr)
    geom = pr.geom
    # push an interior edge midpoint across the cell: the P2 map folds, the straight cell does not
    c = 0
    mid = geom.cell_nodes[c, 3]
    centroid = geom.coords[geom.cell_nodes[c, :3]].mean(axis=0)
    X = state.u.copy()
    X[mid] = X[mid] + 3.0 * (centroid - X[mid])
    state.u = X
    assert not is_valid(geom, X)
    linear = project_cells_linear(geom, X, np.flatnonzero(min_jacobian_determinants(geom, X) <= 0))
    assert is_valid(geom, linear)
    pr2, st2, events = validity_check_and_refine(pr, state, SolverConfig())
    assert events[0].startswith("project:")
    assert not any(e.startswith("split") for e in events)
    assert pr2.disc.mesh.n_cells == mesh.n_cells
    assert is_valid(pr2.geom, st2.u)


def _stretched_triangle():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.01]])
    mesh = ReferenceMesh(verts, np.array([[0, 1, 2]]), spatial_dim=2)
    mesh.tag_boundary(lambda v: "wall")
    return mesh


def test_stretched_cell_is_split_by_longest_edge():
    mesh = _stretched_triangle()
    pr = _problem(mesh)
    ratio = cell_aspect_ratios(pr.geom)[0]
    assert ratio == pytest.approx(100.0)
    state = _state(pr)
    pr2, st2, events = validity_check_and_refine(pr, state, SolverConfig(anisotropy_threshold=50.0))
    assert events == ["split:1"]
    new = pr2.disc.mesh
    assert new.n_cells == 2
    new.check_invariants()
    # the new vertex bisects the longest edge (0,0)-(1,0)
    assert any(np.allclose(v, [0.5, 0.0]) for v in new.vertices)
    assert new.measure() == pytest.approx(mesh.measure())


def test_split_transfers_fields_exactly():
    mesh, _ = build_triangulated_grid(2, 1)
    pr = _problem(mesh, degree=2, p=2)
    state = _state(pr)
    edge = tuple(int(v) for v in mesh.facet_vertices[mesh.interior_facets[0]])
    geom2, st2 = split_edges(pr.geom, state, (pr.disc.Y, pr.disc.S), [edge])
    assert geom2.mesh.n_cells == mesh.n_cells + 2
    geom2.mesh.check_invariants()
    pr2 = pr.with_geometry(geom2)
    # fields are quadratics, so evaluation at child nodes reproduces them
    x, _, _ = geom2.evaluate(pr2.disc.Y.nodes, st2.u)
    expected = 1.0 + x[..., 0] - 2.0 * x[..., 1] ** 2
    np.testing.assert_allclose(st2.y[:, 0, :], expected, atol=1e-12)


def test_refinement_budget():
    mesh = _stretched_triangle()
    pr = _problem(mesh)
    with pytest.raises(RefinementBudgetError):
        validity_check_and_refine(pr, _state(pr), SolverConfig(refinement_budget=2))
