"""Boundary projection b(u) of geometry nodes and its derivative b'(u)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

FREE, FIXED, PLANE, CIRCLE = 0, 1, 2, 3


class ConstraintError(ValueError):
    """The projection is undefined (e.g. a circle node sitting at the center)."""


@dataclass(frozen=True)
class Fixed:
    pass


@dataclass(frozen=True)
class SlidePlane:
    """Plane ``normal . x = offset``; ``normal`` is normalised on use."""

    normal: tuple
    offset: float


@dataclass(frozen=True)
class SlideCircle:
    center: tuple
    radius: float


class BoundaryConstraints:
    """Per-node constraint table for a geometry field.

    Parameters
    ----------
    coords : (n, d) anchor coordinates (fixed nodes are restored to these).
    kinds : (n,) constraint codes ``FREE``, ``FIXED``, ``PLANE``, ``CIRCLE``.
    normals, offsets : plane data (unused rows ignored).
    centers, radii : circle data.
    """

    def __init__(self, coords, kinds, normals=None, offsets=None, centers=None, radii=None):
        coords = np.asarray(coords, dtype=float)
        n, d = coords.shape
        self.dim = d
        self.anchors = coords.copy()
        self.kinds = np.asarray(kinds, dtype=int)
        self.normals = np.zeros((n, d)) if normals is None else np.asarray(normals, dtype=float)
        nn = np.linalg.norm(self.normals, axis=1)
        self.normals[nn > 0] /= nn[nn > 0, None]
        self.offsets = np.zeros(n) if offsets is None else np.asarray(offsets, dtype=float)
        self.centers = np.zeros((n, d)) if centers is None else np.asarray(centers, dtype=float)
        self.radii = np.ones(n) if radii is None else np.asarray(radii, dtype=float)

    @classmethod
    def from_tags(cls, geom, tag_constraints: dict, tol: float = 1e-10):
        """Build constraints from boundary tags of ``geom.mesh``.

        ``tag_constraints`` maps a tag to :class:`Fixed`, :class:`SlidePlane`,
        :class:`SlideCircle` or ``None`` (free).  A node on two different
        constraints becomes fixed, as do all boundary nodes in 1D.
        """
        n, d = geom.coords.shape
        kinds = np.full(n, FREE)
        normals = np.zeros((n, d))
        offsets = np.zeros(n)
        centers = np.zeros((n, d))
        radii = np.ones(n)
        for node, tags in geom.boundary_nodes().items():
            cons = {tag_constraints.get(t, Fixed()) for t in tags}
            cons.discard(None)
            if not cons:
                continue
            if d == 1 or len(cons) > 1 or any(isinstance(c, Fixed) for c in cons):
                kinds[node] = FIXED
                continue
            (c,) = cons
            if isinstance(c, SlidePlane):
                kinds[node] = PLANE
                nrm = np.asarray(c.normal, dtype=float)
                normals[node] = nrm / np.linalg.norm(nrm)
                offsets[node] = c.offset / np.linalg.norm(nrm)
            elif isinstance(c, SlideCircle):
                kinds[node] = CIRCLE
                centers[node] = c.center
                radii[node] = c.radius
            else:
                raise TypeError(f"unknown constraint {c!r}")
        return cls(geom.coords, kinds, normals, offsets, centers, radii)

    @property
    def n_nodes(self) -> int:
        return len(self.kinds)

    def project(self, X: np.ndarray) -> np.ndarray:
        """b(X): nodewise closest-point projection; idempotent."""
        X = np.array(X, dtype=float).reshape(self.n_nodes, self.dim)
        fixed = self.kinds == FIXED
        X[fixed] = self.anchors[fixed]
        pl = self.kinds == PLANE
        if np.any(pl):
            dist = np.sum(X[pl] * self.normals[pl], axis=1) - self.offsets[pl]
            X[pl] -= dist[:, None] * self.normals[pl]
        ci = self.kinds == CIRCLE
        if np.any(ci):
            r = X[ci] - self.centers[ci]
            rn = np.linalg.norm(r, axis=1)
            if np.any(rn < 1e-14):
                raise ConstraintError("slide-circle node at the circle center")
            X[ci] = self.centers[ci] + self.radii[ci, None] * r / rn[:, None]
        return X

    def node_blocks(self, X: np.ndarray) -> np.ndarray:
        """Per-node d x d blocks of b'(X)."""
        X = np.asarray(X, dtype=float).reshape(self.n_nodes, self.dim)
        d = self.dim
        B = np.broadcast_to(np.eye(d), (self.n_nodes, d, d)).copy()
        B[self.kinds == FIXED] = 0.0
        pl = self.kinds == PLANE
        nrm = self.normals[pl]
        B[pl] -= nrm[:, :, None] * nrm[:, None, :]
        ci = self.kinds == CIRCLE
        if np.any(ci):
            r = X[ci] - self.centers[ci]
            rn = np.linalg.norm(r, axis=1)
            if np.any(rn < 1e-14):
                raise ConstraintError("slide-circle node at the circle center")
            nh = r / rn[:, None]
            B[ci] = (self.radii[ci] / rn)[:, None, None] * (np.eye(d) - nh[:, :, None] * nh[:, None, :])
        return B

    def derivative_apply(self, X: np.ndarray, dX: np.ndarray) -> np.ndarray:
        """b'(X) dX."""
        dX = np.asarray(dX, dtype=float).reshape(self.n_nodes, self.dim)
        return np.einsum("nij,nj->ni", self.node_blocks(X), dX)

    def derivative_matrix(self, X: np.ndarray) -> sp.csr_matrix:
        """b'(X) as a sparse block-diagonal matrix on the flattened (node, component) vector."""
        n = self.n_nodes
        return sp.bsr_matrix((self.node_blocks(X), np.arange(n), np.arange(n + 1)),
                             shape=(n * self.dim, n * self.dim)).tocsr()
