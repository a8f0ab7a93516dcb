"""Discrete state operator e_h(y, sigma, u) and its sparse Jacobian.

Residual blocks, all integrated on the unit reference simplex of each cell
or on the unit parameter interval of each facet:

* element conservation  ``(cof(grad u) grad) . F(y, sigma)``
* element constitutive  ``det(grad u) sigma - G(y) (cof(grad u) grad)_x y``
* facet flux jump       ``[[s . F]]``
* facet state jump      ``{{G(y)}} [[y (x) s_x]]``

Element and facet kernels return pointwise values and pointwise
derivative coefficients.  A shared integrator turns them into local
blocks which are scattered into one COO matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import (
    TraceSpace,
    facet_quadrature,
    orthonormal_basis,
    polynomial_space,
    quadrature_rule,
)
from .mesh import (
    GeometryField,
    InvalidGeometryError,
    cofactor,
    cofactor_derivative,
    determinant,
    facet_parameterization,
    generalized_cross_derivative,
)
from .physics import FluxModel, complex_step


# ---------------------------------------------------------------------------
# Boundary conditions
# ---------------------------------------------------------------------------


class BoundaryCondition:
    """Boundary prescription on one tag.

    Subclasses provide the exterior state ``y_b(y+, x)`` together with its
    derivatives; the residual is the flux jump ``s . (F0(y+) - F0(y_b))`` and
    the state jump ``G(y_b) ((y+ - y_b) (x) s_x)`` with ``F0`` the flux at
    zero auxiliary variable.  Because the normal viscous flux is taken from
    the interior it cancels from the flux jump.
    """

    trivial = False

    def boundary_state(self, model: FluxModel, y, x):
        """Return ``(y_b, dy_b/dy+, dy_b/dx)`` with shapes (..., m), (..., m, m), (..., m, d)."""
        raise NotImplementedError


class Outflow(BoundaryCondition):
    """Both interface conditions hold trivially; rows are kept but stay zero."""

    trivial = True


class Inflow(BoundaryCondition):
    """Prescribed exterior state, constant or a function of physical position.

    Parameters
    ----------
    state : array (m,) or callable mapping points (n, d) to (n, m) or (n,).
    gradient : optional callable returning d state / dx, shape (n, m, d).
        Without it the gradient is taken by complex step (falling back to
        central differences if ``state`` rejects complex input).
    """

    def __init__(self, state, gradient=None):
        self.state = state
        self.gradient = gradient

    def _eval(self, x, m):
        v = np.asarray(self.state(x))
        return v.reshape(x.shape[:-1] + (m,))

    def boundary_state(self, model, y, x):
        m = model.m
        lead = y.shape[:-1]
        d = x.shape[-1]
        zero_y = np.zeros(lead + (m, m))
        if not callable(self.state):
            yb = np.broadcast_to(np.asarray(self.state, dtype=float), lead + (m,))
            return yb, zero_y, np.zeros(lead + (m, d))
        flat = x.reshape(-1, d)
        yb = self._eval(flat, m)
        if self.gradient is not None:
            g = np.asarray(self.gradient(flat)).reshape(-1, m, d)
        else:
            try:
                with warnings.catch_warnings():
                    # a state function that casts to real would silently zero the gradient
                    warnings.simplefilter("error", np.exceptions.ComplexWarning)
                    g = complex_step(lambda xc: self._eval(xc, m), flat)
                if not np.all(np.isfinite(g)):
                    raise TypeError
            except (TypeError, ValueError, np.exceptions.ComplexWarning):
                h = 1e-7
                g = np.stack([(self._eval(flat + h * e, m) - self._eval(flat - h * e, m)) / (2 * h)
                              for e in np.eye(d)], axis=-1)
        return yb.reshape(lead + (m,)), zero_y, g.reshape(lead + (m, d))


class IsothermalWall(BoundaryCondition):
    """No-slip wall at temperature ``T_wall``: y_b = (rho+, 0, ..., rho+ cv T_wall)."""

    def __init__(self, T_wall: float):
        self.T_wall = float(T_wall)

    def boundary_state(self, model, y, x):
        m = model.m
        e_wall = model.gas.cv * self.T_wall
        yb = np.zeros(y.shape, dtype=y.dtype)
        yb[..., 0] = y[..., 0]
        yb[..., -1] = y[..., 0] * e_wall
        P = np.zeros(y.shape[:-1] + (m, m))
        P[..., 0, 0] = 1.0
        P[..., -1, 0] = e_wall
        return yb, P, np.zeros(y.shape[:-1] + (m, x.shape[-1]))


# ---------------------------------------------------------------------------
# State containers
# ---------------------------------------------------------------------------


@dataclass
class DiscreteState:
    """Coefficients of (y, sigma, u).

    ``y``: (nc, m, Ny) nodal values per cell; ``sigma``: (nc, m, dx, Ns);
    ``u``: (n_nodes, d) global continuous geometry nodes.
    """

    y: np.ndarray
    sigma: np.ndarray
    u: np.ndarray

    def pack(self) -> np.ndarray:
        return np.concatenate([self.y.ravel(), self.sigma.ravel(), self.u.ravel()])

    def copy(self) -> "DiscreteState":
        return DiscreteState(self.y.copy(), self.sigma.copy(), self.u.copy())


@dataclass
class ResidualSystem:
    """Residual vector and Jacobian with the block layout of a :class:`Discretization`."""

    residual: np.ndarray
    jacobian: sp.csr_matrix | None
    row_blocks: dict
    col_blocks: dict

    def block(self, name: str) -> np.ndarray:
        a, b = self.row_blocks[name]
        return self.residual[a:b]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.residual))


# ---------------------------------------------------------------------------
# Discretization
# ---------------------------------------------------------------------------


class Discretization:
    """Precomputed tables and index maps for a mesh, model and polynomial degrees.

    Parameters
    ----------
    geom : GeometryField template (its ``coords`` provide the initial grid).
    model : flux model with ``model.d == geom.dim``.
    p_y, p_sigma : state and auxiliary degrees (``p_sigma`` defaults to ``p_y``).
    bcs : mapping boundary tag -> :class:`BoundaryCondition`.
    source : optional ``f(x) -> (n, m)`` volume source; the conservation
        residual becomes ``div F - f``.
    """

    def __init__(self, geom: GeometryField, model: FluxModel, p_y: int, p_sigma: int | None = None,
                 bcs: dict | None = None, source=None, volume_exactness: int | None = None,
                 facet_exactness: int | None = None):
        mesh = geom.mesh
        if model.d != mesh.dim:
            raise ValueError(f"model dimension {model.d} does not match mesh dimension {mesh.dim}")
        if mesh.dim > 2:
            raise ValueError("assembly supports lines and triangles")
        self.geom = geom
        self.mesh = mesh
        self.model = model
        self.p_y = p_y
        self.p_sigma = p_y if p_sigma is None else p_sigma
        self.bcs = dict(bcs or {})
        self.source = source
        missing = mesh.tags() - set(self.bcs)
        if missing:
            raise ValueError(f"missing boundary prescription for tags {sorted(missing)}")
        pmax = max(self.p_y, self.p_sigma, geom.degree)
        self.volume_exactness = volume_exactness or 2 * pmax + 2
        self.facet_exactness = facet_exactness or 2 * pmax + 3
        self._build_tables()
        self._build_index()

    # -- tables --------------------------------------------------------------
    def _build_tables(self):
        mesh, kind = self.mesh, self.mesh.kind
        self.Y = polynomial_space(kind, self.p_y)
        self.S = polynomial_space(kind, self.p_sigma)
        self.U = self.geom.space
        self.Vy = orthonormal_basis(kind, self.p_y)
        self.Vs = orthonormal_basis(kind, self.p_sigma)
        rule = quadrature_rule(kind, self.volume_exactness)
        self.vq = rule.points
        self.vw = rule.weights
        self.phi_y, self.dphi_y = self.Y.eval(rule.points)
        self.phi_s, self.dphi_s = self.S.eval(rule.points)
        self.phi_u, self.dphi_u = self.U.eval(rule.points)
        self.psi_y = self.Vy.eval(rule.points)
        self.psi_s = self.Vs.eval(rule.points)

        t, w = facet_quadrature(kind, self.facet_exactness)
        self.ft, self.fw = t, w
        self.W = TraceSpace(kind, self.p_y)
        self.omega = self.W.eval(t)
        nf, nq = mesh.n_facets, len(t)
        d = mesh.dim
        left_pts = np.empty((nf, nq, d))
        right_pts = np.empty((nf, nq, d))
        tangent = np.zeros((nf, max(d - 1, 0), d))
        for f in range(nf):
            par = facet_parameterization(mesh, f, "left")
            left_pts[f] = par.points(t)
            tangent[f] = par.tangent
            if mesh.facet_right[f] >= 0:
                right_pts[f] = facet_parameterization(mesh, f, "right").points(t)
            else:
                right_pts[f] = left_pts[f]
        self.f_tangent = tangent

        def ev(space, pts):
            v, g = space.eval(pts.reshape(-1, d))
            return v.reshape(nf, nq, -1), g.reshape(nf, nq, -1, d)

        self.fphi_yL, _ = ev(self.Y, left_pts)
        self.fphi_sL, _ = ev(self.S, left_pts)
        self.fphi_uL, self.fdphi_uL = ev(self.U, left_pts)
        self.fphi_yR, _ = ev(self.Y, right_pts)
        self.fphi_sR, _ = ev(self.S, right_pts)
        # d/dt of the mapped point per geometry basis function: grad(phi_u) . tangent
        if d > 1:
            self.fdtau = np.einsum("fqnk,fk->fqn", self.fdphi_uL, tangent[:, 0, :])
        else:
            self.fdtau = np.zeros(self.fphi_uL.shape)

    # -- indexing ------------------------------------------------------------
    def _build_index(self):
        mesh, model = self.mesh, self.model
        nc, nf, m, dx, d = mesh.n_cells, mesh.n_facets, model.m, model.dx, mesh.dim
        Ny, Ns, Nu = self.Y.size, self.S.size, self.U.size
        Nvy, Nvs, Nw = self.Vy.size, self.Vs.size, self.W.size
        self.n_y = nc * m * Ny
        self.n_s = nc * m * dx * Ns
        self.n_u = self.geom.n_nodes * d
        self.col_blocks = {"y": (0, self.n_y), "sigma": (self.n_y, self.n_y + self.n_s),
                           "u": (self.n_y + self.n_s, self.n_y + self.n_s + self.n_u)}
        sizes = [("conservation", nc * m * Nvy), ("constitutive", nc * m * dx * Nvs),
                 ("flux_jump", nf * m * Nw), ("state_jump", nf * m * dx * Nw)]
        self.row_blocks = {}
        off = 0
        for name, n in sizes:
            self.row_blocks[name] = (off, off + n)
            off += n
        self.n_rows = off
        self.n_cols = self.col_blocks["u"][1]

        cells = np.arange(nc)
        self.cols_y = cells[:, None] * m * Ny + np.arange(m * Ny)[None, :]
        self.cols_s = self.n_y + cells[:, None] * m * dx * Ns + np.arange(m * dx * Ns)[None, :]
        self.cols_u = (self.col_blocks["u"][0] + self.geom.cell_nodes[:, :, None] * d
                       + np.arange(d)[None, None, :]).reshape(nc, Nu * d)
        self.rows_cons = self.row_blocks["conservation"][0] + cells[:, None] * m * Nvy + np.arange(m * Nvy)
        self.rows_con = (self.row_blocks["constitutive"][0] + cells[:, None] * m * dx * Nvs
                         + np.arange(m * dx * Nvs))
        facets = np.arange(nf)
        self.rows_fj = self.row_blocks["flux_jump"][0] + facets[:, None] * m * Nw + np.arange(m * Nw)
        self.rows_sj = (self.row_blocks["state_jump"][0] + facets[:, None] * m * dx * Nw
                        + np.arange(m * dx * Nw))

    @property
    def shape(self):
        return self.n_rows, self.n_cols

    # -- state helpers -------------------------------------------------------
    def unpack(self, z: np.ndarray) -> DiscreteState:
        m, dx, nc = self.model.m, self.model.dx, self.mesh.n_cells
        a, b = self.col_blocks["sigma"]
        return DiscreteState(z[:a].reshape(nc, m, self.Y.size),
                             z[a:b].reshape(nc, m, dx, self.S.size),
                             z[b:].reshape(self.geom.n_nodes, self.mesh.dim))

    def zero_state(self) -> DiscreteState:
        m, dx, nc = self.model.m, self.model.dx, self.mesh.n_cells
        return DiscreteState(np.zeros((nc, m, self.Y.size)), np.zeros((nc, m, dx, self.S.size)),
                             self.geom.coords.copy())

    def state_from_functions(self, y_fn, sigma_fn=None, coords=None, project: bool = True) -> DiscreteState:
        """Initial state from callables of physical position.

        ``y_fn(x)`` returns (n, m) or (n,); ``sigma_fn(x)`` returns (n, m, dx).
        With ``project`` the fields are L2 projected, otherwise interpolated.
        """
        from .basis import l2_project

        st = self.zero_state()
        if coords is not None:
            st.u = np.asarray(coords, dtype=float).reshape(st.u.shape)
        g = self.geom.with_coords(st.u)
        m, dx = self.model.m, self.model.dx

        def fit(fn, space, shape):
            if project:
                c = l2_project(lambda x: np.asarray(fn(x)).reshape(len(x), -1), g, space)
                return c.reshape((self.mesh.n_cells,) + shape + (space.size,))
            x, _, _ = g.evaluate(space.nodes)
            vals = np.asarray(fn(x.reshape(-1, self.mesh.dim))).reshape(self.mesh.n_cells, space.size, -1)
            return np.moveaxis(vals, 1, 2).reshape((self.mesh.n_cells,) + shape + (space.size,))

        st.y = fit(y_fn, self.Y, (m,))
        if sigma_fn is not None:
            st.sigma = fit(sigma_fn, self.S, (m, dx))
        return st

    def consistent_sigma(self, state: DiscreteState) -> np.ndarray:
        """Auxiliary coefficients interpolating G(y) grad_x y at the sigma nodes."""
        g = self.geom.with_coords(state.u)
        nodes = self.S.nodes
        phi, dphi = self.Y.eval(nodes)
        _, J, _ = g.evaluate(nodes)
        Jinv = np.linalg.inv(J)
        Y = np.einsum("can,qn->cqa", state.y, phi)
        dY = np.einsum("can,qnk,cqke->cqae", state.y, dphi, Jinv)
        dx = self.model.dx
        sig = self.model.constitutive(Y, dY[..., :dx])
        return np.moveaxis(sig, 1, -1).copy()

    # -- evaluation helpers --------------------------------------------------
    def volume_fields(self, state: DiscreteState):
        """State values and reference gradients at volume quadrature points."""
        Y = np.einsum("can,qn->cqa", state.y, self.phi_y)
        dY = np.einsum("can,qnk->cqak", state.y, self.dphi_y)
        S = np.einsum("caln,qn->cqal", state.sigma, self.phi_s)
        dS = np.einsum("caln,qnk->cqalk", state.sigma, self.dphi_s)
        return Y, dY, S, dS


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def _integrate_rows(w, psi, val):
    """R[k, r, i] = sum_q w psi[q, i] val[k, q, r] (psi may be per-k)."""
    if psi.ndim == 2:
        return np.einsum("q,qi,kqr->kri", w, psi, val)
    return np.einsum("q,kqi,kqr->kri", w, psi, val)


def _block(w, psi, coef, phi):
    """B[k, r, i, c, n] = sum_q w psi[q, i] coef[k, q, r, c] phi[(k,) q, n]."""
    ps = "qi" if psi.ndim == 2 else "kqi"
    ph = "qn" if phi.ndim == 2 else "kqn"
    return np.einsum(f"q,{ps},kqrc,{ph}->kricn", w, psi, coef, phi, optimize=True)


def _block_grad(w, psi, coef, dphi):
    """B[k, r, i, c, n] = sum_q w psi[q, i] coef[k, q, r, c, j] dphi[q, n, j]."""
    return np.einsum("q,qi,kqrcj,qnj->kricn", w, psi, coef, dphi, optimize=True)


def _flat(B):
    k, r, i, c, n = B.shape
    return B.reshape(k, r * i, c * n)


def _geom_to_node_major(B, d):
    """Reorder columns from (component e, node g) to (node g, component e)."""
    k, ri, cn = B.shape
    return B.reshape(k, ri, d, cn // d).transpose(0, 1, 3, 2).reshape(k, ri, cn)


class _Collector:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rows, cols, B):
        """Scatter dense blocks B (k, R, C) with row indices (k, R) and col indices (k, C)."""
        k, R, C = B.shape
        self.rows.append(np.broadcast_to(rows[:, :, None], (k, R, C)).ravel())
        self.cols.append(np.broadcast_to(cols[:, None, :], (k, R, C)).ravel())
        self.vals.append(B.ravel())

    def matrix(self, shape):
        if not self.rows:
            return sp.csr_matrix(shape)
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        keep = vals != 0.0
        return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=shape)


def _flux_gradient(model, Y, S, dY, dS):
    """GF[..., a, j, k] = d_k F_aj from reference gradients of y and sigma."""
    Fy = model.flux_dy(Y, S)
    Fs = model.flux_ds(Y, S)
    return (np.einsum("...ajb,...bk->...ajk", Fy, dY)
            + np.einsum("...ajbl,...blk->...ajk", Fs, dS)), Fy, Fs


def element_terms(disc: Discretization, state: DiscreteState, jacobian: bool = True):
    """Element residual blocks and (optionally) Jacobian contributions.

    Returns ``(R_cons (nc, m, Nv), R_con (nc, m, dx, Ns), blocks)`` where
    ``blocks`` lists ``(rows, cols, dense)`` triples.
    """
    model, mesh = disc.model, disc.mesh
    m, dx, d = model.m, model.dx, mesh.dim
    nc = mesh.n_cells
    Xc = state.u[disc.geom.cell_nodes]
    J = np.einsum("cne,qnk->cqek", Xc, disc.dphi_u)
    det = determinant(J)
    if np.any(det <= 0):
        bad = np.unique(np.nonzero(det <= 0)[0])
        raise InvalidGeometryError(f"non-positive Jacobian determinant in cells {bad.tolist()}")
    cof = cofactor(J)
    Y, dY, S, dS = disc.volume_fields(state)
    model.check(Y)
    GF, Fy, Fs = _flux_gradient(model, Y, S, dY, dS)
    D = np.einsum("cqjk,cqajk->cqa", cof, GF)

    src = None
    if disc.source is not None:
        x = np.einsum("cne,qn->cqe", Xc, disc.phi_u)
        src = np.asarray(disc.source(x.reshape(-1, d)), dtype=float).reshape(nc, -1, m)
        D = D - det[..., None] * src

    gt = np.einsum("cqlk,cqbk->cqbl", cof[..., :dx, :], dY)
    r_con = det[..., None, None] * S - model.constitutive(Y, gt)

    R_cons = _integrate_rows(disc.vw, disc.psi_y, D)
    R_con = _integrate_rows(disc.vw, disc.psi_s, r_con.reshape(nc, -1, m * dx)).reshape(nc, m, dx, -1)
    if not jacobian:
        return R_cons, R_con, []

    w = disc.vw
    blocks = []
    # second derivatives of the flux divergence by complex step
    Hy = complex_step(lambda Yc: _flux_gradient(model, Yc, S, dY, dS)[0], Y)
    Sf = S.reshape(S.shape[:-2] + (m * dx,))
    Hs = complex_step(lambda Sc: _flux_gradient(model, Y, Sc.reshape(S.shape), dY, dS)[0], Sf)
    Hs = Hs.reshape(Hs.shape[:-1] + (m, dx))

    # conservation / y
    Cy = np.einsum("cqjk,cqajkb->cqab", cof, Hy)
    By = np.einsum("cqjk,cqajb->cqabk", cof, Fy)
    B = _block(w, disc.psi_y, Cy, disc.phi_y) + _block_grad(w, disc.psi_y, By, disc.dphi_y)
    blocks.append((disc.rows_cons, disc.cols_y, _flat(B)))
    # conservation / sigma
    Cs = np.einsum("cqjk,cqajkbl->cqabl", cof, Hs).reshape(nc, -1, m, m * dx)
    Bs = np.einsum("cqjk,cqajbl->cqablk", cof, Fs).reshape(nc, -1, m, m * dx, d)
    B = _block(w, disc.psi_y, Cs, disc.phi_s) + _block_grad(w, disc.psi_y, Bs, disc.dphi_s)
    blocks.append((disc.rows_cons, disc.cols_s, _flat(B)))
    # conservation / u
    Dc = cofactor_derivative(J)
    T = np.einsum("cqjkem,cqajk->cqaem", Dc, GF)
    if src is not None:
        T = T - np.einsum("cqa,cqem->cqaem", src, cof)
    B = _block_grad(w, disc.psi_y, T, disc.dphi_u)
    if src is not None:
        dsrc = complex_step(lambda xc: np.asarray(disc.source(xc.reshape(-1, d))).reshape(nc, -1, m),
                            np.einsum("cne,qn->cqe", Xc, disc.phi_u))
        B = B - _block(w, disc.psi_y, det[..., None, None] * dsrc, disc.phi_u)
    blocks.append((disc.rows_cons, disc.cols_u, _geom_to_node_major(_flat(B), d)))

    # constitutive / sigma: det * identity
    eye = np.eye(m * dx)
    coef = det[..., None, None] * eye
    B = _block(w, disc.psi_s, coef, disc.phi_s)
    blocks.append((disc.rows_con, disc.cols_s, _flat(B)))
    # constitutive / y
    Gt = model.constitutive_tensor(Y)  # (c,q,a,l,b,l2)
    Gdy = model.constitutive_dy(Y, gt)  # (c,q,a,l,b)
    coef0 = -Gdy.reshape(nc, -1, m * dx, m)
    coef1 = -np.einsum("cqalbi,cqik->cqalbk", Gt, cof[..., :dx, :]).reshape(nc, -1, m * dx, m, d)
    B = _block(w, disc.psi_s, coef0, disc.phi_y) + _block_grad(w, disc.psi_s, coef1, disc.dphi_y)
    blocks.append((disc.rows_con, disc.cols_y, _flat(B)))
    # constitutive / u
    Tc = (np.einsum("cqal,cqem->cqalem", S, cof)
          - np.einsum("cqalbi,cqikem,cqbk->cqalem", Gt, Dc[..., :dx, :, :, :], dY))
    B = _block_grad(w, disc.psi_s, Tc.reshape(nc, -1, m * dx, d, d), disc.dphi_u)
    blocks.append((disc.rows_con, disc.cols_u, _geom_to_node_major(_flat(B), d)))
    return R_cons, R_con, blocks


def _facet_normals(disc: Discretization, state: DiscreteState, facets):
    """Scaled normals s (per unit facet parameter) and ds/dX coefficients."""
    mesh = disc.mesh
    d = mesh.dim
    sign = mesh.facet_sign[facets]
    nq = len(disc.ft)
    if d == 1:
        s = np.broadcast_to(sign[:, None, None], (len(facets), nq, 1)).copy()
        ds = np.zeros((len(facets), nq, 1, 1, disc.U.size))
        return s, ds
    XL = state.u[disc.geom.cell_nodes[mesh.facet_left[facets]]]
    tang = np.einsum("fne,fqn->fqe", XL, disc.fdtau[facets])
    Rm = generalized_cross_derivative(d)
    s = sign[:, None, None] * np.einsum("je,fqe->fqj", Rm, tang)
    # ds[f, q, j, e, g] = sign R[j, e] dtau[f, q, g]
    ds = sign[:, None, None, None, None] * Rm[None, None, :, :, None] * disc.fdtau[facets][:, :, None, None, :]
    return s, ds


def facet_terms(disc: Discretization, state: DiscreteState, jacobian: bool = True):
    """Flux-jump and state-jump residuals on every facet plus Jacobian blocks."""
    mesh, model = disc.mesh, disc.model
    m, dx, d = model.m, model.dx, mesh.dim
    nf = mesh.n_facets
    Nw = disc.W.size
    w, om = disc.fw, disc.omega
    R_fj = np.zeros((nf, m, Nw))
    R_sj = np.zeros((nf, m, dx, Nw))
    blocks = []

    def scatter_geom(fs, coef_fj, coef_sj, phi):
        """coef_* (k, q, r, d, N) contracted against node-major geometry columns."""
        cols = disc.cols_u[mesh.facet_left[fs]]
        for rows, coef in ((disc.rows_fj[fs], coef_fj), (disc.rows_sj[fs], coef_sj)):
            if coef is None:
                continue
            k, q, r = coef.shape[:3]
            B = np.einsum("q,qi,kqreg->krige", w, om, coef)  # (k, r, i, g, e)
            blocks.append((rows, cols, B.reshape(k, r * Nw, -1)))
        del phi

    # ---- interior facets --------------------------------------------------
    fi = mesh.interior_facets
    if len(fi):
        cL, cR = mesh.facet_left[fi], mesh.facet_right[fi]
        YL = np.einsum("fan,fqn->fqa", state.y[cL], disc.fphi_yL[fi])
        YR = np.einsum("fan,fqn->fqa", state.y[cR], disc.fphi_yR[fi])
        SL = np.einsum("faln,fqn->fqal", state.sigma[cL], disc.fphi_sL[fi])
        SR = np.einsum("faln,fqn->fqal", state.sigma[cR], disc.fphi_sR[fi])
        model.check(YL)
        model.check(YR)
        s, ds = _facet_normals(disc, state, fi)
        sx = s[..., :dx]
        dF = model.flux(YL, SL) - model.flux(YR, SR)
        fj = np.einsum("fqj,fqaj->fqa", s, dF)
        delta = YL - YR
        outer = delta[..., :, None] * sx[..., None, :]
        sj = 0.5 * (model.constitutive(YL, outer) + model.constitutive(YR, outer))
        R_fj[fi] = _integrate_rows(w, om, fj)
        R_sj[fi] = _integrate_rows(w, om, sj.reshape(len(fi), -1, m * dx)).reshape(len(fi), m, dx, Nw)
        if jacobian:
            k = len(fi)
            FyL, FyR = model.flux_dy(YL, SL), model.flux_dy(YR, SR)
            FsL, FsR = model.flux_ds(YL, SL), model.flux_ds(YR, SR)
            cyL = np.einsum("fqj,fqajb->fqab", s, FyL)
            cyR = -np.einsum("fqj,fqajb->fqab", s, FyR)
            csL = np.einsum("fqj,fqajbl->fqabl", s, FsL).reshape(k, -1, m, m * dx)
            csR = -np.einsum("fqj,fqajbl->fqabl", s, FsR).reshape(k, -1, m, m * dx)
            rows = disc.rows_fj[fi]
            blocks.append((rows, disc.cols_y[cL], _flat(_block(w, om, cyL, disc.fphi_yL[fi]))))
            blocks.append((rows, disc.cols_y[cR], _flat(_block(w, om, cyR, disc.fphi_yR[fi]))))
            blocks.append((rows, disc.cols_s[cL], _flat(_block(w, om, csL, disc.fphi_sL[fi]))))
            blocks.append((rows, disc.cols_s[cR], _flat(_block(w, om, csR, disc.fphi_sR[fi]))))

            Gbar = 0.5 * (model.constitutive_tensor(YL) + model.constitutive_tensor(YR))
            Gs = np.einsum("fqalbi,fqi->fqalb", Gbar, sx)
            syL = 0.5 * model.constitutive_dy(YL, outer) + Gs
            syR = 0.5 * model.constitutive_dy(YR, outer) - Gs
            rows = disc.rows_sj[fi]
            blocks.append((rows, disc.cols_y[cL],
                           _flat(_block(w, om, syL.reshape(k, -1, m * dx, m), disc.fphi_yL[fi]))))
            blocks.append((rows, disc.cols_y[cR],
                           _flat(_block(w, om, syR.reshape(k, -1, m * dx, m), disc.fphi_yR[fi]))))
            if d > 1:
                # geometry through s only: ds[f,q,j,e,g]
                gfj = np.einsum("fqaj,fqjeg->fqaeg", dF, ds)
                Gd = np.einsum("fqalbi,fqb->fqali", Gbar, delta)
                gsj = np.einsum("fqali,fqieg->fqaleg", Gd, ds[:, :, :dx]).reshape(k, -1, m * dx, d, disc.U.size)
                scatter_geom(fi, gfj, gsj, None)

    # ---- boundary facets --------------------------------------------------
    for tag in sorted(mesh.tags()):
        bc = disc.bcs[tag]
        fb = mesh.facets_with_tag(tag)
        if bc.trivial or len(fb) == 0:
            continue
        k = len(fb)
        cL = mesh.facet_left[fb]
        YL = np.einsum("fan,fqn->fqa", state.y[cL], disc.fphi_yL[fb])
        model.check(YL)
        XL = state.u[disc.geom.cell_nodes[cL]]
        x = np.einsum("fne,fqn->fqe", XL, disc.fphi_uL[fb])
        yb, P, Bx = bc.boundary_state(model, YL, x)
        model.check(yb)
        s, ds = _facet_normals(disc, state, fb)
        sx = s[..., :dx]
        dF = model.flux_no_viscous(YL) - model.flux_no_viscous(yb)
        fj = np.einsum("fqj,fqaj->fqa", s, dF)
        delta = YL - yb
        outer = delta[..., :, None] * sx[..., None, :]
        sj = model.constitutive(yb, outer)
        R_fj[fb] = _integrate_rows(w, om, fj)
        R_sj[fb] = _integrate_rows(w, om, sj.reshape(k, -1, m * dx)).reshape(k, m, dx, Nw)
        if not jacobian:
            continue
        F0L = model.flux_no_viscous_dy(YL)
        F0b = model.flux_no_viscous_dy(yb)
        sF0b = np.einsum("fqj,fqajb->fqab", s, F0b)
        cy = np.einsum("fqj,fqajb->fqab", s, F0L) - np.einsum("fqab,fqbc->fqac", sF0b, P)
        Gt = model.constitutive_tensor(yb)
        Gdy = model.constitutive_dy(yb, outer)  # (f,q,a,l,b)
        Gs = np.einsum("fqalbi,fqi->fqalb", Gt, sx)
        eye = np.eye(m)
        sy = (np.einsum("fqalb,fqbc->fqalc", Gdy, P)
              + np.einsum("fqalb,fqbc->fqalc", Gs, eye - P))
        blocks.append((disc.rows_fj[fb], disc.cols_y[cL], _flat(_block(w, om, cy, disc.fphi_yL[fb]))))
        blocks.append((disc.rows_sj[fb], disc.cols_y[cL],
                       _flat(_block(w, om, sy.reshape(k, -1, m * dx, m), disc.fphi_yL[fb]))))
        # geometry: through s and through x in y_b(x)
        phi_u = disc.fphi_uL[fb]
        gfj = -np.einsum("fqab,fqbe,fqg->fqaeg", sF0b, Bx, phi_u)
        gsj = (np.einsum("fqalb,fqbe,fqg->fqaleg", Gdy, Bx, phi_u)
               - np.einsum("fqalb,fqbe,fqg->fqaleg", Gs, Bx, phi_u))
        if d > 1:
            gfj = gfj + np.einsum("fqaj,fqjeg->fqaeg", dF, ds)
            Gd = np.einsum("fqalbi,fqb->fqali", Gt, delta)
            gsj = gsj + np.einsum("fqali,fqieg->fqaleg", Gd, ds[:, :, :dx])
        scatter_geom(fb, gfj, gsj.reshape(k, -1, m * dx, d, disc.U.size), None)
    return R_fj, R_sj, blocks


# ---------------------------------------------------------------------------
# Global assembly
# ---------------------------------------------------------------------------


def assemble(disc: Discretization, state: DiscreteState, constraints=None, jacobian: bool = True) -> ResidualSystem:
    """Residual of e(y, sigma, u) = e~(y, sigma, b(u)) and its Jacobian.

    With ``constraints`` (a :class:`~mdgice.geometry_bc.BoundaryConstraints`)
    the geometry is first projected and the geometry column block is
    multiplied by b'(u).
    """
    eval_state = state
    if constraints is not None:
        eval_state = DiscreteState(state.y, state.sigma, constraints.project(state.u))
    R_cons, R_con, eb = element_terms(disc, eval_state, jacobian)
    R_fj, R_sj, fb = facet_terms(disc, eval_state, jacobian)
    r = np.concatenate([R_cons.ravel(), R_con.ravel(), R_fj.ravel(), R_sj.ravel()])
    Jm = None
    if jacobian:
        col = _Collector()
        for rows, cols, B in eb + fb:
            col.add(rows, cols, B)
        Jm = col.matrix(disc.shape)
        if constraints is not None:
            a, b = disc.col_blocks["u"]
            Bp = constraints.derivative_matrix(state.u)
            Jm = sp.hstack([Jm[:, :a], Jm[:, a:b] @ Bp], format="csr")
    return ResidualSystem(r, Jm, disc.row_blocks, disc.col_blocks)


def residual_vector(disc: Discretization, z: np.ndarray, constraints=None) -> np.ndarray:
    return assemble(disc, disc.unpack(z), constraints, jacobian=False).residual


def finite_difference_jacobian(disc: Discretization, state: DiscreteState, constraints=None,
                               step: float = 1e-6, columns=None) -> np.ndarray:
    """Dense central-difference Jacobian (selected columns) for verification."""
    z = state.pack()
    cols = range(len(z)) if columns is None else columns
    out = np.zeros((disc.n_rows, len(list(cols))))
    for j, c in enumerate(cols):
        h = step * max(1.0, abs(z[c]))
        zp, zm = z.copy(), z.copy()
        zp[c] += h
        zm[c] -= h
        out[:, j] = (residual_vector(disc, zp, constraints) - residual_vector(disc, zm, constraints)) / (2 * h)
    return out


def jacobian_check(disc: Discretization, state: DiscreteState, constraints=None, step: float = 1e-6) -> dict:
    """Maximum relative discrepancy between assembled and finite-difference Jacobians per column block."""
    J = assemble(disc, state, constraints).jacobian.toarray()
    Jfd = finite_difference_jacobian(disc, state, constraints, step)
    scale = max(np.abs(J).max(), 1e-300)
    out = {}
    for name, (a, b) in disc.col_blocks.items():
        if b > a:
            out[name] = float(np.abs(J[:, a:b] - Jfd[:, a:b]).max() / scale)
    out["max"] = max(out.values())
    return out
