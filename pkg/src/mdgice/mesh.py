"""Reference-domain topology, polynomial geometry mappings and geometry calculus.

A :class:`ReferenceMesh` is the fixed simplicial partition of the reference
domain; a :class:`GeometryField` is the globally continuous Lagrange mapping
``u`` of degree ``p_u`` whose nodal coordinates are solver unknowns.  All
element integrals are evaluated on the unit reference simplex of each cell.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import (
    FACE_VERTICES,
    LINE,
    TRIANGLE,
    cell_kind,
    face_node_indices,
    polynomial_space,
    quadrature_rule,
    reference_vertices,
)


class InvalidGeometryError(ValueError):
    """Raised (or reported) when a mapping has a non-positive Jacobian determinant."""


class RefinementBudgetError(RuntimeError):
    """Refinement cascade exceeded the configured cell budget."""


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------


@dataclass
class ReferenceMesh:
    """Simplicial partition of the reference domain with oriented facets.

    Facet ``f`` is shared by ``facet_left[f]`` and ``facet_right[f]`` (``-1``
    on the boundary).  Its vertex order is the left cell's local face order
    and ``facet_sign[f]`` makes the generalized cross product of the facet
    tangents point out of the left cell.
    """

    vertices: np.ndarray
    cells: np.ndarray
    spatial_dim: int
    facet_vertices: np.ndarray = field(init=False)
    facet_left: np.ndarray = field(init=False)
    facet_left_face: np.ndarray = field(init=False)
    facet_right: np.ndarray = field(init=False)
    facet_right_face: np.ndarray = field(init=False)
    facet_sign: np.ndarray = field(init=False)
    facet_tags: list = field(init=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        if self.vertices.ndim == 1:
            self.vertices = self.vertices[:, None]
        self.cells = np.asarray(self.cells, dtype=int)
        if self.cells.shape[1] != self.dim + 1:
            raise ValueError("cells must be simplices matching the vertex dimension")
        if self.spatial_dim not in (self.dim, self.dim - 1):
            raise ValueError("spatial_dim must equal dim (spatial) or dim - 1 (space-time)")
        self._orient_cells()
        self._build_facets()

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def kind(self) -> str:
        return cell_kind(self.dim)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_facets(self) -> int:
        return len(self.facet_left)

    @property
    def is_spacetime(self) -> bool:
        return self.spatial_dim == self.dim - 1

    @property
    def interior_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_right >= 0)

    @property
    def boundary_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_right < 0)

    def _orient_cells(self):
        A = self.cell_affine_jacobians()
        det = np.linalg.det(A)
        if np.any(np.abs(det) < 1e-14):
            raise ValueError("degenerate reference cell")
        flip = det < 0
        if np.any(flip):
            c = self.cells[flip]
            self.cells[flip] = c[:, [1, 0, *range(2, c.shape[1])]]

    def cell_affine_jacobians(self) -> np.ndarray:
        v = self.vertices[self.cells]
        return np.swapaxes(v[:, 1:, :] - v[:, :1, :], 1, 2)

    def _build_facets(self):
        faces = FACE_VERTICES[self.kind]
        seen: dict[tuple, int] = {}
        fverts, left, lface, right, rface = [], [], [], [], []
        for c, cell in enumerate(self.cells):
            for f, local in enumerate(faces):
                verts = tuple(int(cell[i]) for i in local)
                key = tuple(sorted(verts))
                if key in seen:
                    k = seen[key]
                    if right[k] >= 0:
                        raise ValueError(f"non-manifold facet {key}")
                    right[k] = c
                    rface[k] = f
                else:
                    seen[key] = len(left)
                    fverts.append(verts)
                    left.append(c)
                    lface.append(f)
                    right.append(-1)
                    rface.append(-1)
        self.facet_vertices = np.array(fverts, dtype=int)
        self.facet_left = np.array(left, dtype=int)
        self.facet_left_face = np.array(lface, dtype=int)
        self.facet_right = np.array(right, dtype=int)
        self.facet_right_face = np.array(rface, dtype=int)
        self.facet_tags = [None] * len(left)
        self.facet_sign = self._facet_signs()

    def _facet_signs(self) -> np.ndarray:
        signs = np.empty(self.n_facets)
        centroid = self.vertices[self.cells].mean(axis=1)
        for f in range(self.n_facets):
            fv = self.vertices[self.facet_vertices[f]]
            tangents = fv[1:] - fv[:1]
            s = generalized_cross(tangents)
            outward = fv.mean(axis=0) - centroid[self.facet_left[f]]
            signs[f] = 1.0 if float(s @ outward) > 0 else -1.0
        return signs

    def facet_reference_length(self) -> np.ndarray:
        """Measure of each facet in reference-domain coordinates (1 for points)."""
        if self.dim == 1:
            return np.ones(self.n_facets)
        fv = self.vertices[self.facet_vertices]
        return np.linalg.norm(generalized_cross(fv[:, 1:] - fv[:, :1]), axis=-1)

    def tag_boundary(self, classify) -> None:
        """Assign ``facet_tags`` from ``classify(facet_vertex_coords) -> str``."""
        for f in self.boundary_facets:
            self.facet_tags[f] = classify(self.vertices[self.facet_vertices[f]])

    def tags(self) -> set:
        return {t for t in self.facet_tags if t is not None}

    def facets_with_tag(self, tag: str) -> np.ndarray:
        return np.array([f for f, t in enumerate(self.facet_tags) if t == tag], dtype=int)

    def check_invariants(self) -> None:
        """Raise ``AssertionError`` if topology invariants are violated."""
        counts: dict[tuple, int] = {}
        for cell in self.cells:
            for local in FACE_VERTICES[self.kind]:
                key = tuple(sorted(int(cell[i]) for i in local))
                counts[key] = counts.get(key, 0) + 1
        stored = {tuple(sorted(v)) for v in self.facet_vertices.tolist()}
        assert stored == set(counts), "facets differ from the union of cell boundaries"
        for f in range(self.n_facets):
            key = tuple(sorted(self.facet_vertices[f].tolist()))
            if self.facet_right[f] >= 0:
                assert counts[key] == 2, "interior facet must be shared by two cells"
            else:
                assert counts[key] == 1, "boundary facet must belong to one cell"
                assert self.facet_tags[f] is not None, "untagged boundary facet"

    def measure(self) -> float:
        return float(np.sum(np.abs(np.linalg.det(self.cell_affine_jacobians())))) / math.factorial(self.dim)


def build_line_mesh(n_cells: int, x_min: float, x_max: float, degree: int = 1):
    """Uniform line mesh with boundary tags ``left``/``right`` and affine geometry."""
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")
    if not x_max > x_min:
        raise ValueError("degenerate interval")
    x = np.linspace(x_min, x_max, n_cells + 1)
    cells = np.stack([np.arange(n_cells), np.arange(1, n_cells + 1)], axis=1)
    mesh = ReferenceMesh(x[:, None], cells, spatial_dim=1)
    mid = 0.5 * (x_min + x_max)
    mesh.tag_boundary(lambda v: "left" if v[0, 0] < mid else "right")
    return mesh, GeometryField(mesh, degree)


def build_triangulated_grid(nx: int, ny: int, domain=(0.0, 1.0, 0.0, 1.0), degree: int = 1,
                            spacetime: bool = False):
    """Split a uniform ``nx`` x ``ny`` quadrilateral grid into ``2 nx ny`` triangles.

    Boundary facets are tagged ``left``, ``right``, ``bottom``, ``top``.  With
    ``spacetime=True`` the second coordinate is time.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    x0, x1, y0, y1 = domain
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate rectangle")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return i * (ny + 1) + j

    cells = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            cells.append((a, b, c))
            cells.append((a, c, d))
    mesh = ReferenceMesh(verts, np.array(cells), spatial_dim=1 if spacetime else 2)
    tol = 1e-12 * max(x1 - x0, y1 - y0)

    def classify(v):
        if np.all(np.abs(v[:, 0] - x0) < tol):
            return "left"
        if np.all(np.abs(v[:, 0] - x1) < tol):
            return "right"
        if np.all(np.abs(v[:, 1] - y0) < tol):
            return "bottom"
        return "top"

    mesh.tag_boundary(classify)
    return mesh, GeometryField(mesh, degree)


# ---------------------------------------------------------------------------
# Geometry calculus
# ---------------------------------------------------------------------------


def determinant(J: np.ndarray) -> np.ndarray:
    d = J.shape[-1]
    if d == 1:
        return J[..., 0, 0]
    if d == 2:
        return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    return np.linalg.det(J)


def cofactor(J: np.ndarray) -> np.ndarray:
    """cof(J) = det(J) J^{-T}, computed polynomially (valid for singular J)."""
    d = J.shape[-1]
    if d == 1:
        return np.ones_like(J)
    if d == 2:
        C = np.empty_like(J)
        C[..., 0, 0] = J[..., 1, 1]
        C[..., 0, 1] = -J[..., 1, 0]
        C[..., 1, 0] = -J[..., 0, 1]
        C[..., 1, 1] = J[..., 0, 0]
        return C
    if d == 3:
        c0, c1, c2 = J[..., :, 0], J[..., :, 1], J[..., :, 2]
        return np.stack([np.cross(c1, c2), np.cross(c2, c0), np.cross(c0, c1)], axis=-1)
    raise ValueError("cofactor implemented for d <= 3")


def _levi_civita(d: int) -> np.ndarray:
    eps = np.zeros((d,) * d)
    for perm in itertools.permutations(range(d)):
        inv = sum(1 for i in range(d) for j in range(i + 1, d) if perm[i] > perm[j])
        eps[perm] = -1.0 if inv % 2 else 1.0
    return eps


def cofactor_derivative(J: np.ndarray) -> np.ndarray:
    """d cof(J)_{jk} / d J_{em}, shape (..., d, d, d, d)."""
    d = J.shape[-1]
    lead = J.shape[:-2]
    if d == 1:
        return np.zeros(lead + (1, 1, 1, 1))
    eps = _levi_civita(d)
    if d == 2:
        D = np.einsum("je,km->jkem", eps, eps)
        return np.broadcast_to(D, lead + D.shape)
    return np.einsum("jeb,kmn,...bn->...jkem", eps, eps, J)


def generalized_cross(tangents: np.ndarray) -> np.ndarray:
    """Generalized cross product of ``d - 1`` vectors in R^d, shape (..., d-1, d).

    Expands the determinant whose last row holds the coordinate directions;
    for ``d = 1`` the empty product is ``+1``.
    """
    tangents = np.asarray(tangents)
    d = tangents.shape[-1]
    if tangents.shape[-2] != d - 1:
        raise ValueError("need exactly d - 1 tangent vectors")
    if d == 1:
        return np.ones(tangents.shape[:-2] + (1,), dtype=tangents.dtype)
    if d == 2:
        return np.stack([-tangents[..., 0, 1], tangents[..., 0, 0]], axis=-1)
    if d == 3:
        return np.cross(tangents[..., 0, :], tangents[..., 1, :])
    out = []
    for i in range(d):
        minor = np.delete(tangents, i, axis=-1)
        out.append((-1) ** (d - 1 + i) * np.linalg.det(minor))
    return np.stack(out, axis=-1)


def generalized_cross_derivative(d: int) -> np.ndarray:
    """For d <= 2 the cross product is linear in the tangent: returns R with s = R tau."""
    if d == 1:
        return np.zeros((1, 1))
    if d == 2:
        return np.array([[0.0, -1.0], [1.0, 0.0]])
    raise ValueError("linear cross-product derivative only for d <= 2")


# ---------------------------------------------------------------------------
# Geometry field
# ---------------------------------------------------------------------------


def _number_geometry_nodes(mesh: ReferenceMesh, degree: int):
    """Global numbering of continuous Lagrange nodes; returns (cell_nodes, n_nodes)."""
    kind = mesh.kind
    space = polynomial_space(kind, degree)
    ng = space.size
    nc = mesh.n_cells
    cell_nodes = np.full((nc, ng), -1, dtype=int)
    nv = len(mesh.vertices)
    if degree == 0:
        raise ValueError("geometry degree must be >= 1")
    nvert_local = mesh.dim + 1
    cell_nodes[:, :nvert_local] = mesh.cells
    nxt = nv
    if kind == TRIANGLE:
        edge_ids: dict[tuple, int] = {}
        ne = degree - 1
        for c, cell in enumerate(mesh.cells):
            for f, (a, b) in enumerate(FACE_VERTICES[TRIANGLE]):
                va, vb = int(cell[a]), int(cell[b])
                key = (min(va, vb), max(va, vb))
                if key not in edge_ids:
                    edge_ids[key] = nxt
                    nxt += ne
                base = edge_ids[key]
                ids = np.arange(base, base + ne)
                if va > vb:
                    ids = ids[::-1]
                cell_nodes[c, 3 + f * ne: 3 + (f + 1) * ne] = ids
        n_interior = ng - 3 - 3 * ne
        start = 3 + 3 * ne
    else:
        n_interior = ng - 2
        start = 2
    for c in range(nc):
        cell_nodes[c, start:start + n_interior] = np.arange(nxt, nxt + n_interior)
        nxt += n_interior
    return cell_nodes, nxt


class GeometryField:
    """Continuous degree-``p_u`` mapping u from the reference mesh to physical space."""

    def __init__(self, mesh: ReferenceMesh, degree: int, coords: np.ndarray | None = None):
        self.mesh = mesh
        self.degree = degree
        self.space = polynomial_space(mesh.kind, degree)
        self.cell_nodes, self.n_nodes = _number_geometry_nodes(mesh, degree)
        self.ref_coords = self._affine_coords()
        self.coords = self.ref_coords.copy() if coords is None else np.array(coords, dtype=float)

    @property
    def dim(self) -> int:
        return self.mesh.dim

    def _affine_coords(self) -> np.ndarray:
        X = np.zeros((self.n_nodes, self.dim))
        v = self.mesh.vertices[self.mesh.cells]  # (nc, d+1, d)
        bary = _barycentric(self.space.nodes)  # (ng, d+1)
        pts = np.einsum("nv,cvd->cnd", bary, v)
        X[self.cell_nodes.ravel()] = pts.reshape(-1, self.dim)
        return X

    def copy(self) -> "GeometryField":
        g = GeometryField.__new__(GeometryField)
        g.mesh, g.degree, g.space = self.mesh, self.degree, self.space
        g.cell_nodes, g.n_nodes = self.cell_nodes, self.n_nodes
        g.ref_coords = self.ref_coords
        g.coords = self.coords.copy()
        return g

    def with_coords(self, coords: np.ndarray) -> "GeometryField":
        g = self.copy()
        g.coords = np.asarray(coords, dtype=float).reshape(self.n_nodes, self.dim)
        return g

    def cell_coords(self, coords: np.ndarray | None = None) -> np.ndarray:
        X = self.coords if coords is None else coords
        return X[self.cell_nodes]

    def evaluate(self, points: np.ndarray, coords: np.ndarray | None = None):
        """Physical points, Jacobians w.r.t. the unit simplex, and determinants.

        Returns ``x`` (nc, nq, d), ``J`` (nc, nq, d, d), ``det`` (nc, nq).
        """
        phi, dphi = self.space.eval(points)
        Xc = self.cell_coords(coords)
        x = np.einsum("cna,qn->cqa", Xc, phi)
        J = np.einsum("cna,qnk->cqak", Xc, dphi)
        return x, J, determinant(J)

    def boundary_nodes(self) -> dict:
        """Map geometry node -> set of boundary tags of the facets containing it."""
        out: dict[int, set] = {}
        mesh = self.mesh
        for f in mesh.boundary_facets:
            c, face = mesh.facet_left[f], mesh.facet_left_face[f]
            for i in face_node_indices(mesh.kind, self.degree, face):
                out.setdefault(int(self.cell_nodes[c, i]), set()).add(mesh.facet_tags[f])
        return out


def _barycentric(points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(points)
    return np.concatenate([1.0 - points.sum(axis=1, keepdims=True), points], axis=1)


def geometry_eval(geom: GeometryField, cell: int, ref_point):
    """Map a unit-simplex point of ``cell``: returns (x, J, detJ, cof).

    ``J`` is the gradient of u with respect to reference-domain coordinates,
    so for an affine u it is the matrix of that affine map.
    """
    pt = np.atleast_2d(np.asarray(ref_point, dtype=float))
    phi, dphi = geom.space.eval(pt)
    Xc = geom.coords[geom.cell_nodes[cell]]
    x = phi[0] @ Xc
    J_xi = np.einsum("na,nk->ak", Xc, dphi[0])
    A = geom.mesh.cell_affine_jacobians()[cell]
    J = J_xi @ np.linalg.inv(A)
    det = float(determinant(J))
    return x, J, det, cofactor(J)


# ---------------------------------------------------------------------------
# Facet parameterisation and scaled normals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FacetParameterization:
    """Maps facet parameter ``t`` to unit-simplex points of one adjacent cell.

    ``tangent`` is d(xi)/dt in the cell's unit-simplex coordinates.
    """

    cell: int
    face: int
    origin: np.ndarray
    tangent: np.ndarray  # (d-1, d)

    def points(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.tangent.shape[0] == 0:
            return np.repeat(self.origin[None, :], len(t), axis=0)
        return self.origin[None, :] + t[:, None] * self.tangent[0][None, :]


def facet_parameterization(mesh: ReferenceMesh, facet: int, side: str = "left") -> FacetParameterization:
    """Parameterisation of ``facet`` seen from its left or right cell.

    The parameter runs along the facet's stored vertex order, so both sides
    see the same physical point for the same ``t``.
    """
    if side == "left":
        cell, face = mesh.facet_left[facet], mesh.facet_left_face[facet]
    else:
        cell, face = mesh.facet_right[facet], mesh.facet_right_face[facet]
        if cell < 0:
            raise ValueError("boundary facet has no right cell")
    ref = reference_vertices(mesh.kind)
    local = FACE_VERTICES[mesh.kind][face]
    gv = [int(mesh.cells[cell, i]) for i in local]
    fv = mesh.facet_vertices[facet].tolist()
    order = [local[gv.index(v)] for v in fv]
    origin = ref[order[0]]
    tangent = np.array([ref[o] - origin for o in order[1:]]).reshape(len(order) - 1, mesh.dim)
    return FacetParameterization(int(cell), int(face), origin, tangent)


def scaled_normal(geom: GeometryField, facet: int, t, unit_reference_tangent: bool = True) -> np.ndarray:
    """Scaled normal s(grad u) at facet parameters ``t``; shape (len(t), d).

    With ``unit_reference_tangent`` the facet is parameterised with unit
    reference-domain tangents, so ``|s|`` is the physical-to-reference
    measure ratio.  Otherwise ``s`` is per unit of the facet parameter ``t``.
    Raises :class:`InvalidGeometryError` for a collapsed facet.
    """
    mesh = geom.mesh
    par = facet_parameterization(mesh, facet)
    pts = par.points(t)
    _, dphi = geom.space.eval(pts)
    Xc = geom.coords[geom.cell_nodes[par.cell]]
    J = np.einsum("na,qnk->qak", Xc, dphi)
    tang = np.einsum("qak,tk->qta", J, par.tangent)
    s = mesh.facet_sign[facet] * generalized_cross(tang)
    if unit_reference_tangent and mesh.dim > 1:
        s = s / mesh.facet_reference_length()[facet] ** (mesh.dim - 1)
    if np.any(np.linalg.norm(s, axis=-1) <= 1e-14):
        raise InvalidGeometryError(f"collapsed facet {facet}")
    return s


def unit_normal(s: np.ndarray) -> np.ndarray:
    return s / np.linalg.norm(s, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Validity sampling
# ---------------------------------------------------------------------------


def validity_points(geom: GeometryField) -> np.ndarray:
    """Geometry nodes plus volume quadrature points of the unit simplex."""
    rule = quadrature_rule(geom.mesh.kind, max(2 * geom.degree, 2))
    return np.concatenate([geom.space.nodes, rule.points], axis=0)


def min_jacobian_determinants(geom: GeometryField, coords: np.ndarray | None = None) -> np.ndarray:
    """Minimum det(grad u) per cell over the validity sample points."""
    _, _, det = geom.evaluate(validity_points(geom), coords)
    return det.min(axis=1)


def is_valid(geom: GeometryField, coords: np.ndarray | None = None) -> bool:
    return bool(np.all(min_jacobian_determinants(geom, coords) > 0))


def cell_aspect_ratios(geom: GeometryField) -> np.ndarray:
    """Longest edge over the height onto it, from the physical vertex positions."""
    mesh = geom.mesh
    if mesh.dim == 1:
        return np.ones(mesh.n_cells)
    v = geom.coords[geom.cell_nodes[:, :3]]
    e = np.stack([v[:, 2] - v[:, 1], v[:, 0] - v[:, 2], v[:, 1] - v[:, 0]], axis=1)
    lengths = np.linalg.norm(e, axis=-1)
    area = 0.5 * np.abs(e[:, 2, 0] * (-e[:, 1, 1]) - e[:, 2, 1] * (-e[:, 1, 0]))
    lmax = lengths.max(axis=1)
    with np.errstate(divide="ignore"):
        return np.where(area > 0, lmax ** 2 / (2.0 * np.maximum(area, 1e-300)), np.inf)
