"""Polynomial spaces, quadrature rules and L2 projection on reference simplices.

Two reference cells are supported: the unit line ``[0, 1]`` and the unit
triangle ``{(r, s) : r, s >= 0, r + s <= 1}``.  Trial functions are nodal
(Lagrange) bases; test functions are L2-orthonormal modal bases so that the
Euclidean norm of a residual block equals the reference L2 norm of its
projection onto the test space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import roots_jacobi

LINE = "line"
TRIANGLE = "triangle"

MAX_EXACTNESS = 61

_VERTICES = {
    LINE: np.array([[0.0], [1.0]]),
    TRIANGLE: np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
}

# Local faces: face f of a triangle is opposite vertex f, traversed CCW.
FACE_VERTICES = {
    LINE: ((0,), (1,)),
    TRIANGLE: ((1, 2), (2, 0), (0, 1)),
}


def cell_kind(dim: int) -> str:
    if dim == 1:
        return LINE
    if dim == 2:
        return TRIANGLE
    raise ValueError(f"no simplex cell kind implemented for dimension {dim}")


def reference_vertices(kind: str) -> np.ndarray:
    return _VERTICES[kind].copy()


def reference_measure(kind: str) -> float:
    return {LINE: 1.0, TRIANGLE: 0.5}[kind]


def dimension(kind: str) -> int:
    return {LINE: 1, TRIANGLE: 2}[kind]


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and positive weights on a reference cell."""

    kind: str
    points: np.ndarray
    weights: np.ndarray
    exactness: int

    @property
    def size(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def quadrature_rule(kind: str, exactness: int) -> QuadratureRule:
    """Gauss rule exact for polynomials of total degree ``exactness``.

    Lines use Gauss-Legendre; triangles use the collapsed (Duffy) product of
    Gauss-Legendre and Gauss-Jacobi(1, 0) rules, which keeps all weights
    positive.
    """
    if exactness < 1:
        raise ValueError("quadrature exactness must be >= 1")
    if exactness > MAX_EXACTNESS:
        raise ValueError(f"exactness {exactness} exceeds supported maximum {MAX_EXACTNESS}")
    n = (exactness + 2) // 2
    x, w = npleg.leggauss(n)
    a = 0.5 * (x + 1.0)
    wa = 0.5 * w
    if kind == LINE:
        return QuadratureRule(kind, a[:, None], wa, 2 * n - 1)
    if kind == TRIANGLE:
        xb, wb = roots_jacobi(n, 1.0, 0.0)
        b = 0.5 * (xb + 1.0)
        wb = 0.25 * wb
        A, B = np.meshgrid(a, b, indexing="ij")
        WA, WB = np.meshgrid(wa, wb, indexing="ij")
        r = (A * (1.0 - B)).ravel()
        s = B.ravel()
        pts = np.stack([r, s], axis=1)
        return QuadratureRule(kind, pts, (WA * WB).ravel(), 2 * n - 1)
    raise ValueError(f"unknown cell kind {kind!r}")


# ---------------------------------------------------------------------------
# Modal building block: products of shifted Legendre polynomials
# ---------------------------------------------------------------------------


def exponents(kind: str, degree: int) -> list[tuple[int, ...]]:
    if kind == LINE:
        return [(a,) for a in range(degree + 1)]
    return [(a, t - a) for t in range(degree + 1) for a in range(t, -1, -1)]


def _legendre_table(x: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Values and d/dx of P_a(2x - 1), a = 0..degree; shapes (npts, degree+1)."""
    t = 2.0 * np.asarray(x) - 1.0
    vals = npleg.legvander(t, degree)
    ders = np.zeros_like(vals)
    for a in range(1, degree + 1):
        c = np.zeros(a + 1)
        c[a] = 1.0
        ders[..., a] = 2.0 * npleg.legval(t, npleg.legder(c))
    return vals, ders


def modal_eval(kind: str, degree: int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Product-Legendre modal basis spanning P_p; values (n, N), grads (n, N, d)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    exps = exponents(kind, degree)
    if kind == LINE:
        v, dv = _legendre_table(points[:, 0], degree)
        return v, dv[:, :, None]
    vr, dvr = _legendre_table(points[:, 0], degree)
    vs, dvs = _legendre_table(points[:, 1], degree)
    ia = [e[0] for e in exps]
    ib = [e[1] for e in exps]
    vals = vr[:, ia] * vs[:, ib]
    grads = np.stack([dvr[:, ia] * vs[:, ib], vr[:, ia] * dvs[:, ib]], axis=-1)
    return vals, grads


# ---------------------------------------------------------------------------
# Nodal trial spaces
# ---------------------------------------------------------------------------


def gll_points(degree: int) -> np.ndarray:
    """Gauss-Lobatto-Legendre points on [0, 1] in increasing order."""
    if degree == 0:
        return np.array([0.5])
    c = np.zeros(degree + 1)
    c[degree] = 1.0
    interior = np.sort(npleg.legroots(npleg.legder(c))) if degree > 1 else np.array([])
    return 0.5 * (np.concatenate([[-1.0], interior, [1.0]]) + 1.0)


def lagrange_nodes(kind: str, degree: int) -> np.ndarray:
    """Nodes ordered vertices, then edge-interior (per local face), then interior.

    Edge-interior nodes of face ``f`` run from the face's first vertex to its
    second, which is what the global geometry numbering relies on.
    """
    if kind == LINE:
        x = gll_points(degree)
        if degree == 0:
            return x[:, None]
        return np.concatenate([[x[0], x[-1]], x[1:-1]])[:, None]
    if degree == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    verts = _VERTICES[TRIANGLE]
    nodes = [v for v in verts]
    t = np.arange(1, degree) / degree
    for a, b in FACE_VERTICES[TRIANGLE]:
        for ti in t:
            nodes.append((1 - ti) * verts[a] + ti * verts[b])
    for j in range(1, degree):
        for i in range(1, degree - j):
            nodes.append(np.array([i / degree, j / degree]))
    return np.array(nodes)


def face_node_indices(kind: str, degree: int, face: int) -> np.ndarray:
    """Local indices of Lagrange nodes lying on ``face`` (vertex-to-vertex order)."""
    if kind == LINE:
        return np.array([face])
    a, b = FACE_VERTICES[TRIANGLE][face]
    start = 3 + face * (degree - 1)
    return np.array([a, *range(start, start + degree - 1), b])


class PolynomialSpace:
    """Nodal Lagrange basis of P_p on a reference simplex."""

    def __init__(self, kind: str, degree: int):
        if degree < 0:
            raise ValueError("polynomial degree must be non-negative")
        self.kind = kind
        self.degree = degree
        self.dim = dimension(kind)
        self.nodes = lagrange_nodes(kind, degree)
        V, _ = modal_eval(kind, degree, self.nodes)
        self._inv_vandermonde = np.linalg.inv(V)

    @property
    def size(self) -> int:
        return math.comb(self.degree + self.dim, self.dim)

    def eval(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Basis values (n, N) and reference gradients (n, N, d) at ``points``."""
        vals, grads = modal_eval(self.kind, self.degree, points)
        return vals @ self._inv_vandermonde, np.einsum("pmk,mn->pnk", grads, self._inv_vandermonde)

    def interpolate(self, fn, points_map=None) -> np.ndarray:
        """Nodal coefficients of ``fn`` evaluated at the (mapped) nodes."""
        pts = self.nodes if points_map is None else points_map(self.nodes)
        return np.asarray(fn(pts))

    def __repr__(self) -> str:
        return f"PolynomialSpace({self.kind!r}, {self.degree})"


@lru_cache(maxsize=None)
def polynomial_space(kind: str, degree: int) -> PolynomialSpace:
    return PolynomialSpace(kind, degree)


class OrthonormalBasis:
    """L2(reference cell)-orthonormal basis of P_p, used for test functions."""

    def __init__(self, kind: str, degree: int):
        self.kind = kind
        self.degree = degree
        rule = quadrature_rule(kind, max(2 * degree, 1))
        V, _ = modal_eval(kind, degree, rule.points)
        T = np.eye(V.shape[1])
        # two Cholesky passes: the second removes round-off left by the ill-conditioned first
        for _ in range(2):
            W = V @ T
            L = np.linalg.cholesky(W.T @ (rule.weights[:, None] * W))
            T = T @ np.linalg.inv(L).T
        self._transform = T

    @property
    def size(self) -> int:
        return self._transform.shape[1]

    def eval(self, points: np.ndarray) -> np.ndarray:
        vals, _ = modal_eval(self.kind, self.degree, points)
        return vals @ self._transform


@lru_cache(maxsize=None)
def orthonormal_basis(kind: str, degree: int) -> OrthonormalBasis:
    return OrthonormalBasis(kind, degree)


class TraceSpace:
    """Single-valued facet test space: one coefficient set per facet.

    The facet is parameterised by ``t`` in [0, 1] (a point for line meshes,
    where the trace space is the constants).
    """

    def __init__(self, cell: str, degree: int):
        self.cell = cell
        self.degree = degree if cell == TRIANGLE else 0
        self._basis = orthonormal_basis(LINE, self.degree) if cell == TRIANGLE else None

    @property
    def size(self) -> int:
        return 1 if self._basis is None else self._basis.size

    def eval(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self._basis is None:
            return np.ones((len(t), 1))
        return self._basis.eval(t[:, None])


def facet_quadrature(cell: str, exactness: int) -> tuple[np.ndarray, np.ndarray]:
    """Facet parameter nodes ``t`` and weights (sum 1; a single unit node in 1D)."""
    if cell == LINE:
        return np.array([0.0]), np.array([1.0])
    rule = quadrature_rule(LINE, exactness)
    return rule.points[:, 0], rule.weights


# ---------------------------------------------------------------------------
# L2 projection on a (possibly curved) mesh
# ---------------------------------------------------------------------------


def l2_project(fn, geom, space: PolynomialSpace, exactness: int | None = None) -> np.ndarray:
    """Broken L2 projection of ``fn`` onto ``space`` over every cell of ``geom``.

    ``fn`` maps physical points (n, d) to values (n,) or (n, m).  Returns nodal
    coefficients of shape (ncells, N) or (ncells, m, N).
    """
    if exactness is None:
        exactness = max(2 * space.degree + 2, 2 * geom.space.degree + 2, 4)
    rule = quadrature_rule(space.kind, exactness)
    phi, _ = space.eval(rule.points)
    x, _, det = geom.evaluate(rule.points)
    if np.any(det <= 0):
        raise ValueError("l2_project: invalid geometry (non-positive Jacobian determinant)")
    nc, nq, d = x.shape
    f = np.asarray(fn(x.reshape(-1, d)), dtype=float)
    scalar = f.ndim == 1
    f = f.reshape(nc, nq, -1)
    wdet = rule.weights[None, :] * det
    M = np.einsum("cq,qa,qb->cab", wdet, phi, phi)
    rhs = np.einsum("cq,qa,cqm->cam", wdet, phi, f)
    coeffs = np.linalg.solve(M, rhs)  # (nc, N, m)
    coeffs = np.moveaxis(coeffs, 1, 2)
    return coeffs[:, 0, :] if scalar else coeffs


def l2_error(fn, coeffs: np.ndarray, geom, space: PolynomialSpace, exactness: int | None = None) -> float:
    """Physical L2 norm of ``fn - f_h`` for nodal coefficients ``coeffs``."""
    if exactness is None:
        exactness = min(MAX_EXACTNESS, max(4 * space.degree + 8, 24))
    rule = quadrature_rule(space.kind, exactness)
    phi, _ = space.eval(rule.points)
    x, _, det = geom.evaluate(rule.points)
    nc, nq, d = x.shape
    f = np.asarray(fn(x.reshape(-1, d)), dtype=float).reshape(nc, nq, -1)
    c = coeffs if coeffs.ndim == 3 else coeffs[:, None, :]
    fh = np.einsum("cmb,qb->cqm", c, phi)
    err2 = np.einsum("q,cq,cqm->", rule.weights, det, (f - fh) ** 2)
    return float(np.sqrt(err2))
