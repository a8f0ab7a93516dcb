"""Grid validity repair: linear projection of inverted cells and longest-edge bisection."""

from __future__ import annotations

import numpy as np

from .assembly import DiscreteState
from .basis import FACE_VERTICES
from .mesh import (
    GeometryField,
    InvalidGeometryError,
    ReferenceMesh,
    RefinementBudgetError,
    _barycentric,
    cell_aspect_ratios,
    min_jacobian_determinants,
)


def project_cells_linear(geom: GeometryField, coords: np.ndarray, cells) -> np.ndarray:
    """Move the non-vertex geometry nodes of ``cells`` onto the affine interpolant of their vertices."""
    X = np.array(coords, dtype=float)
    bary = _barycentric(geom.space.nodes)
    nv = geom.dim + 1
    for c in cells:
        nodes = geom.cell_nodes[c]
        X[nodes[nv:]] = bary[nv:] @ X[nodes[:nv]]
    return X


def longest_edge(geom: GeometryField, coords: np.ndarray, cell: int) -> tuple:
    """Reference-vertex pair of the physically longest edge of ``cell``."""
    mesh = geom.mesh
    verts = mesh.cells[cell]
    if mesh.dim == 1:
        return int(verts[0]), int(verts[1])
    X = coords[geom.cell_nodes[cell, :3]]
    best, pair = -1.0, None
    for a, b in FACE_VERTICES[mesh.kind]:
        L = float(np.linalg.norm(X[a] - X[b]))
        if L > best:
            best, pair = L, (int(verts[a]), int(verts[b]))
    return pair


def split_edges(geom: GeometryField, state: DiscreteState, disc_spaces, edges):
    """Bisect reference edges (vertex pairs), splitting every cell that contains them.

    Fields are transferred by evaluating the parent polynomials at the child
    nodes, which is exact.  Returns ``(new_geom, new_state)``.
    """
    mesh = geom.mesh
    verts = [v for v in mesh.vertices]
    cells = [list(c) for c in mesh.cells]
    parent = list(range(mesh.n_cells))
    done = set()
    for a, b in edges:
        key = (min(a, b), max(a, b))
        if key in done:
            continue
        done.add(key)
        hits = [i for i, c in enumerate(cells) if a in c and b in c]
        if not hits:
            continue
        m = len(verts)
        verts.append(0.5 * (mesh_vertex(verts, a) + mesh_vertex(verts, b)))
        for i in hits:
            c = cells[i]
            cells[i] = [m if v == b else v for v in c]
            cells.append([m if v == a else v for v in c])
            parent.append(parent[i])
    new_mesh = ReferenceMesh(np.array(verts), np.array(cells), mesh.spatial_dim)
    _inherit_tags(mesh, new_mesh)
    parent = np.array(parent)
    new_geom = GeometryField(new_mesh, geom.degree)

    A_old = mesh.cell_affine_jacobians()
    v0_old = mesh.vertices[mesh.cells[:, 0]]
    A_new = new_mesh.cell_affine_jacobians()
    v0_new = new_mesh.vertices[new_mesh.cells[:, 0]]

    def parent_points(space_nodes):
        """Parent unit-simplex coordinates of each child's local nodes: (nc_new, n, d)."""
        xhat = v0_new[:, None, :] + np.einsum("cdk,nk->cnd", A_new, space_nodes)
        Ainv = np.linalg.inv(A_old[parent])
        return np.einsum("ckd,cnd->cnk", Ainv, xhat - v0_old[parent][:, None, :])

    def transfer(space, coeffs):
        """coeffs (nc_old, ..., N) -> (nc_new, ..., N) by evaluation at child nodes."""
        pts = parent_points(space.nodes)
        out = np.empty((len(parent),) + coeffs.shape[1:])
        for c in range(len(parent)):
            phi, _ = space.eval(pts[c])
            out[c] = np.einsum("...n,qn->...q", coeffs[parent[c]], phi)
        return out

    Xold = state.u[geom.cell_nodes]  # (nc, Nu, d)
    Xc = transfer(geom.space, np.swapaxes(Xold, 1, 2))  # (nc_new, d, Nu)
    X = np.zeros((new_geom.n_nodes, mesh.dim))
    X[new_geom.cell_nodes.ravel()] = np.swapaxes(Xc, 1, 2).reshape(-1, mesh.dim)
    new_geom.coords = X
    Yspace, Sspace = disc_spaces
    y = transfer(Yspace, state.y)
    s = transfer(Sspace, state.sigma)
    return new_geom, DiscreteState(y, s, X)


def mesh_vertex(verts, i):
    return np.asarray(verts[i], dtype=float)


def _inherit_tags(old: ReferenceMesh, new: ReferenceMesh):
    """Tag each new boundary facet with the old boundary facet that contains it."""
    ob = old.boundary_facets
    oseg = old.vertices[old.facet_vertices[ob]]  # (nb, nfv, d)
    for f in new.boundary_facets:
        pts = new.vertices[new.facet_vertices[f]]
        c = pts.mean(axis=0)
        if old.dim == 1:
            dist = np.abs(oseg[:, 0, 0] - c[0])
        else:
            p, q = oseg[:, 0], oseg[:, 1]
            t = np.clip(np.einsum("nd,nd->n", c - p, q - p) / np.einsum("nd,nd->n", q - p, q - p), 0, 1)
            dist = np.linalg.norm(p + t[:, None] * (q - p) - c, axis=1)
        new.facet_tags[f] = old.facet_tags[ob[int(np.argmin(dist))]]


def validity_check_and_refine(problem, state: DiscreteState, config):
    """Repair invalid cells and split over-stretched ones.

    Returns ``(problem, state, events)``; ``events`` is empty when nothing
    changed.  Raises :class:`RefinementBudgetError` if the cell count would
    exceed ``config.refinement_budget`` and :class:`InvalidGeometryError` if
    inverted cells survive both repairs.
    """
    geom = problem.geom
    events = []
    X = state.u
    bad = np.flatnonzero(min_jacobian_determinants(geom, X) <= 0)
    if len(bad):
        X = project_cells_linear(geom, X, bad)
        events.append(f"project:{len(bad)}")
        state = DiscreteState(state.y, state.sigma, X)
        bad = np.flatnonzero(min_jacobian_determinants(geom, X) <= 0)
    split = set(bad.tolist())
    thr = getattr(config, "anisotropy_threshold", 50.0)
    if thr and geom.dim > 1:
        split |= set(np.flatnonzero(cell_aspect_ratios(geom.with_coords(X)) > thr).tolist())
    if not split:
        if events:
            return problem, problem.project(state), events
        return problem, state, []
    budget = getattr(config, "refinement_budget", 4000)
    if geom.mesh.n_cells + 2 * len(split) > budget:
        raise RefinementBudgetError(f"refinement would exceed {budget} cells")
    edges = [longest_edge(geom, X, c) for c in sorted(split)]
    new_geom, new_state = split_edges(geom, state, (problem.disc.Y, problem.disc.S), edges)
    events.append(f"split:{len(split)}")
    new_problem = problem.with_geometry(new_geom)
    new_state = new_problem.project(new_state)
    if np.any(min_jacobian_determinants(new_geom, new_state.u) <= 0):
        raise InvalidGeometryError("inverted cells remain after refinement")
    return new_problem, new_state, events
