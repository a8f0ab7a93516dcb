"""Point sampling of discrete solutions and derived flow quantities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import Discretization, DiscreteState
from .mesh import GeometryField
from .physics import NavierStokes


class SamplingError(ValueError):
    """A requested point lies outside the physical grid."""


def _cell_boxes(geom: GeometryField, coords: np.ndarray, pad: float):
    Xc = coords[geom.cell_nodes]
    lo, hi = Xc.min(axis=1), Xc.max(axis=1)
    span = (hi - lo).max(axis=1, keepdims=True)
    return lo - pad * span, hi + pad * span


def locate(geom: GeometryField, points, coords: np.ndarray | None = None, tol: float = 1e-10,
           newton_iters: int = 30):
    """Cell index and unit-simplex coordinates of physical ``points``.

    Curved cells are inverted by Newton iteration.  Returns ``(cells, xi)``
    with ``cells[i] = -1`` for points outside the grid.
    """
    X = geom.coords if coords is None else np.asarray(coords, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = geom.dim
    lo, hi = _cell_boxes(geom, X, 0.05)
    cells = np.full(len(pts), -1, dtype=int)
    xi_out = np.zeros((len(pts), d))
    centroid = np.full((1, d), 1.0 / (d + 1))
    for i, p in enumerate(pts):
        cand = np.flatnonzero(np.all((p >= lo) & (p <= hi), axis=1))
        best, best_viol = None, np.inf
        for c in cand:
            xi = centroid.copy()
            Xc = X[geom.cell_nodes[c]]
            for _ in range(newton_iters):
                phi, dphi = geom.space.eval(xi)
                r = phi[0] @ Xc - p
                J = np.einsum("na,nk->ak", Xc, dphi[0])
                try:
                    dxi = np.linalg.solve(J, r)
                except np.linalg.LinAlgError:
                    break
                xi = xi - dxi[None, :]
                if np.abs(dxi).max() < 1e-14:
                    break
            bary = np.concatenate([[1.0 - xi.sum()], xi[0]])
            viol = max(0.0, -bary.min())
            if viol < best_viol:
                best, best_viol = (c, xi[0].copy()), viol
            if viol <= tol:
                break
        if best is not None and best_viol <= 1e-8:
            cells[i], xi_out[i] = best
    return cells, xi_out


def sample(disc: Discretization, state: DiscreteState, points, strict: bool = True):
    """State ``y`` at physical points, shape (n, m).

    Raises :class:`SamplingError` when ``strict`` and a point is outside the
    grid; otherwise such rows are ``nan``.
    """
    cells, xi = locate(disc.geom, points, state.u)
    if strict and np.any(cells < 0):
        raise SamplingError(f"{int(np.sum(cells < 0))} sample points outside the grid")
    out = np.full((len(cells), disc.model.m), np.nan)
    for i, (c, x) in enumerate(zip(cells, xi)):
        if c >= 0:
            phi, _ = disc.Y.eval(x[None, :])
            out[i] = state.y[c] @ phi[0]
    return out


def sample_with_gradient(disc: Discretization, state: DiscreteState, points):
    """State and its physical gradient at points: (n, m), (n, m, d)."""
    cells, xi = locate(disc.geom, points, state.u)
    if np.any(cells < 0):
        raise SamplingError(f"{int(np.sum(cells < 0))} sample points outside the grid")
    m, d = disc.model.m, disc.geom.dim
    y = np.empty((len(cells), m))
    g = np.empty((len(cells), m, d))
    for i, (c, x) in enumerate(zip(cells, xi)):
        phi, dphi = disc.Y.eval(x[None, :])
        _, dphu = disc.U.eval(x[None, :])
        Xc = state.u[disc.geom.cell_nodes[c]]
        J = np.einsum("na,nk->ak", Xc, dphu[0])
        y[i] = state.y[c] @ phi[0]
        g[i] = np.einsum("mn,nk->mk", state.y[c], dphi[0]) @ np.linalg.inv(J)
    return y, g


def l1_error_on_line(disc, state, x_ref, y_ref, fixed_coord=None, component: int = 0) -> float:
    """Mean absolute difference to a reference profile sampled at ``x_ref``.

    ``fixed_coord`` appends a constant trailing coordinate (e.g. ``t = 1`` for
    space-time grids).
    """
    x_ref = np.asarray(x_ref, dtype=float)
    pts = x_ref[:, None]
    if fixed_coord is not None:
        pts = np.column_stack([x_ref, np.full_like(x_ref, fixed_coord)])
    y = sample(disc, state, pts)[:, component]
    return float(np.mean(np.abs(y - np.asarray(y_ref))))


# ---------------------------------------------------------------------------
# Navier-Stokes surface and centerline quantities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FreestreamRef:
    """Reference state for surface coefficients (defaults: the nondimensional freestream)."""

    rho: float
    speed: float
    pressure: float
    temperature: float
    gamma: float

    @property
    def total_temperature(self) -> float:
        mach2 = self.speed ** 2 * self.rho / (self.gamma * self.pressure)
        return self.temperature * (1.0 + 0.5 * (self.gamma - 1.0) * mach2)

    @classmethod
    def from_mach(cls, mach: float, model: NavierStokes):
        g = model.gas.gamma
        return cls(1.0, mach, 1.0 / g, 1.0 / (g * model.gas.gas_constant), g)


def pressure_coefficient(p, ref: FreestreamRef):
    return (np.asarray(p) - ref.pressure) / (0.5 * ref.rho * ref.speed ** 2)


def stanton_number(q_n, ref: FreestreamRef, cp: float, T_wall: float):
    return np.asarray(q_n) / (cp * ref.rho * ref.speed * (ref.total_temperature - T_wall))


@dataclass(frozen=True)
class SurfaceSample:
    s: float
    cp: float
    ch: float
    q_n: float


class ShockNotFound(LookupError):
    """The heat-flux profile has no interior minimum (e.g. q_n vanishes identically)."""


def shock_location(x, q_n, atol: float = 1e-12) -> float:
    """Position of the minimum normal heat flux along a sampling line.

    Raises :class:`ShockNotFound` when ``q_n`` is flat to ``atol`` or the
    minimum sits at an end of the line.
    """
    q = np.asarray(q_n, dtype=float)
    if q.size < 3 or np.ptp(q) <= atol:
        raise ShockNotFound("normal heat flux is flat along the sampling line")
    i = int(np.argmin(q))
    if i == 0 or i == q.size - 1:
        raise ShockNotFound("heat-flux minimum lies on the end of the sampling line")
    return float(np.asarray(x)[i])


def _ns_fields(model: NavierStokes, y, g, direction):
    """Primitive fields and heat flux along ``direction`` from states and gradients."""
    rho = y[:, 0]
    p = model.pressure(y)
    T = model.temperature(y)
    v = model.velocity(y)
    cv = model.gas.cv
    mom = y[:, 1:-1]
    m2 = np.sum(mom * mom, axis=1)
    dT = np.empty_like(y)
    dT[:, 0] = (-y[:, -1] / rho ** 2 + m2 / rho ** 3) / cv
    dT[:, 1:-1] = -mom / (rho ** 2 * cv)[:, None]
    dT[:, -1] = 1.0 / (rho * cv)
    gradT = np.einsum("na,nak->nk", dT, g)
    q_n = -model.k * gradT @ np.asarray(direction, dtype=float)
    return {"rho": rho, "p": p, "T": T, "v": v, "q_n": q_n}


def centerline(disc: Discretization, state: DiscreteState, start, end, n: int = 1024) -> dict:
    """Primitive fields and the heat flux along ``end - start`` at ``n`` uniform points."""
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    s = np.linspace(0.0, 1.0, n)
    pts = start[None, :] + s[:, None] * (end - start)[None, :]
    y, g = sample_with_gradient(disc, state, pts)
    L = float(np.linalg.norm(end - start))
    out = _ns_fields(disc.model, y, g, (end - start) / L)
    out["s"] = s * L
    out["x"] = pts
    return out


def surface_samples(disc: Discretization, state: DiscreteState, tag: str, ref: FreestreamRef,
                    T_wall: float) -> list[SurfaceSample]:
    """C_p, Stanton number and wall heat flux at the state nodes of ``tag`` facets.

    In 1D the surface is the boundary point itself (``s = 0``).  The heat
    flux is taken along the outward unit normal into the wall.
    """
    from .basis import face_node_indices
    from .mesh import scaled_normal

    mesh = disc.geom.mesh
    model = disc.model
    geom = disc.geom.with_coords(state.u)
    facets = mesh.facets_with_tag(tag)
    pts, normals = [], []
    for f in facets:
        c, face = mesh.facet_left[f], mesh.facet_left_face[f]
        idx = face_node_indices(mesh.kind, disc.p_y, face)
        xi = disc.Y.nodes[idx]
        phu, _ = disc.U.eval(xi)
        X = phu @ state.u[disc.geom.cell_nodes[c]]
        if mesh.dim == 1:
            n = np.sign(X[0] - state.u[disc.geom.cell_nodes[c]].mean(axis=0))[None, :]
            n = np.repeat(n, len(X), axis=0)
        else:
            t = np.linspace(0.0, 1.0, len(X))
            s = scaled_normal(geom, f, t)
            n = s / np.linalg.norm(s, axis=1, keepdims=True)
        pts.append(X)
        normals.append(n)
    pts = np.concatenate(pts)
    normals = np.concatenate(normals)
    _, keep = np.unique(np.round(pts, 12), axis=0, return_index=True)
    keep = np.sort(keep)
    pts, normals = pts[keep], normals[keep]
    # pull points a hair inside so point location is unambiguous
    y, g = sample_with_gradient(disc, state, pts - 1e-12 * normals)
    fields = {k: [] for k in ("p", "q_n")}
    for i in range(len(pts)):
        fi = _ns_fields(model, y[i:i + 1], g[i:i + 1], normals[i])
        fields["p"].append(fi["p"][0])
        fields["q_n"].append(fi["q_n"][0])
    p = np.array(fields["p"])
    q = np.array(fields["q_n"])
    order = np.argsort(np.arctan2(pts[:, -1], pts[:, 0])) if mesh.dim > 1 else np.arange(len(pts))
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts[order], axis=0), axis=1))])
    cp = pressure_coefficient(p[order], ref)
    ch = stanton_number(q[order], ref, model.gas.cp, T_wall)
    return [SurfaceSample(float(a), float(b), float(c), float(d)) for a, b, c, d in zip(arc, cp, ch, q[order])]
