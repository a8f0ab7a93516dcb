"""Benchmark problem setups: boundary layer, space-time Burgers, 1D viscous shock."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import DiscreteState, Inflow, Outflow
from .basis import l2_error, l2_project
from .geometry_bc import SlidePlane
from .mesh import build_line_mesh, build_triangulated_grid
from .oracles import (
    Freestream,
    burgers_shock_formation_ic,
    exact_advection_diffusion,
    normal_shock,
)
from .physics import AdvectionDiffusion, Burgers, NavierStokes, SCALED_FLUX
from .solver import CONVERGED, IterationReport, Problem, SolverConfig, solve_continuation, solve_stationary


def loglog_slope(dofs, errors) -> float:
    """Negative least-squares slope of ln(error) against ln(dofs)."""
    return float(-np.polyfit(np.log(dofs), np.log(errors), 1)[0])


# ---------------------------------------------------------------------------
# Steady advection-diffusion boundary layer
# ---------------------------------------------------------------------------


@dataclass
class BoundaryLayerConfig:
    """Pe-controlled boundary layer at x=1 on a line grid.

    ``pe_schedule`` are Peclet numbers solved before ``pe`` when starting
    from the uniform grid; ``sequence`` warm-starts each degree of a study
    from the grid converged at the previous degree.
    """

    pe: float = 100.0
    n_cells: int = 8
    geometry_degree: int = 1
    constitutive_choice: str = SCALED_FLUX
    pe_schedule: tuple = (10.0,)
    sequence: bool = True
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(
        lambda_u=1e-12, elastic_weight=1e-10, tol=1e-14, max_iter=3000))


@dataclass
class BoundaryLayerResult:
    p: int
    problem: Problem
    state: DiscreteState
    report: IterationReport
    error: float
    projection_error: float

    @property
    def nodes(self) -> np.ndarray:
        return np.sort(self.state.u[: self.problem.geom.mesh.vertices.shape[0], 0])


def boundary_layer_problem(p: int, cfg: BoundaryLayerConfig, coords=None, pe: float | None = None) -> Problem:
    _, geom = build_line_mesh(cfg.n_cells, 0.0, 1.0, degree=cfg.geometry_degree)
    if coords is not None:
        geom = geom.with_coords(coords)
    model = AdvectionDiffusion([1.0], 1.0 / (cfg.pe if pe is None else pe), cfg.constitutive_choice)
    bcs = {"left": Inflow([0.0]), "right": Inflow([1.0])}
    return Problem(geom, model, p, bcs=bcs, tag_constraints={})


def projection_error(p: int, cfg: BoundaryLayerConfig) -> float:
    """L2 error of the best approximation on the uniform grid.

    The profile varies like exp(Pe h) across a cell, so the projection uses
    high-order quadrature to be the true best approximation.
    """
    from .basis import polynomial_space

    _, geom = build_line_mesh(cfg.n_cells, 0.0, 1.0, degree=1)
    space = polynomial_space(geom.mesh.kind, p)
    fn = lambda x: exact_advection_diffusion(x[:, 0], cfg.pe)
    return float(l2_error(fn, l2_project(fn, geom, space, exactness=40), geom, space))


def solve_boundary_layer(p: int, cfg: BoundaryLayerConfig = BoundaryLayerConfig(), coords=None,
                         ) -> BoundaryLayerResult:
    """Solve at degree ``p``; ``coords`` overrides the uniform initial grid.

    Starting from the uniform grid runs the Peclet schedule first.
    """
    problem = boundary_layer_problem(p, cfg, coords, pe=cfg.pe_schedule[0] if coords is None and cfg.pe_schedule else None)
    state = problem.disc.state_from_functions(lambda x: x[:, 0])
    if coords is None and cfg.pe_schedule:
        models = [AdvectionDiffusion([1.0], 1.0 / pe, cfg.constitutive_choice)
                  for pe in (*cfg.pe_schedule, cfg.pe)]
        problem, state, report = solve_continuation(problem, state, models, cfg.solver)
    else:
        problem, state, report = solve_stationary(problem, state, cfg.solver)
    fn = lambda x: exact_advection_diffusion(x[:, 0], cfg.pe)
    err = float(l2_error(fn, state.y[:, 0, :], problem.geom.with_coords(state.u), problem.disc.Y))
    return BoundaryLayerResult(p, problem, state, report, err, projection_error(p, cfg))


@dataclass
class ConvergenceStudy:
    rows: list
    mdg_slope: float
    projection_slope: float
    elapsed: float

    def table(self) -> list[dict]:
        return [{"p": r.p, "dofs": r.problem.disc.mesh.n_cells * (r.p + 1), "error_mdg": r.error,
                 "error_projection": r.projection_error, "iterations": r.report.iterations,
                 "status": r.report.status} for r in self.rows]


def convergence_study(cfg: BoundaryLayerConfig = BoundaryLayerConfig(), p_list=range(1, 7)) -> ConvergenceStudy:
    """MDG-ICE and uniform-grid projection errors over ``p_list`` with fitted slopes."""
    t0 = time.perf_counter()
    rows = []
    coords = None
    for p in p_list:
        res = solve_boundary_layer(p, cfg, coords)
        rows.append(res)
        if cfg.sequence:
            coords = res.state.u.copy()
    dofs = [cfg.n_cells * (r.p + 1) for r in rows]
    return ConvergenceStudy(rows, loglog_slope(dofs, [r.error for r in rows]),
                            loglog_slope(dofs, [r.projection_error for r in rows]),
                            time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Space-time Burgers shock formation
# ---------------------------------------------------------------------------


@dataclass
class BurgersConfig:
    """Space-time Burgers on [0,1]x[0,1] starting from the extruded initial condition.

    ``eps_schedule`` are viscosities solved before ``eps``.  The final
    viscosity is solved in phases ``(scale, iterations)``: every
    regularisation weight is multiplied by ``scale``, so the grid first
    settles under stiff regularisation and is then released.  Each phase
    stops early once ``||J^T r||`` drops below ``solver.tol``.
    """

    nx: int = 10
    nt: int = 10
    p: int = 3
    eps: float = 1e-3
    t_shock: float = 0.5
    y_inf: float = 0.2
    eps_schedule: tuple = (1e-2,)
    constitutive_choice: str = SCALED_FLUX
    stage_iterations: int = 300
    relax: tuple = ((1.0, 600), (1e-2, 600), (1e-4, 800))
    inviscid_relax: tuple = ((1.0, 200), (1e-2, 300))
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(
        lambda_y=1e-4, lambda_sigma=1e-4, lambda_u=1e-4, elastic_weight=1e-2,
        tol=5e-8, max_iter=2000, refine=False))


def burgers_problem(cfg: BurgersConfig, eps: float | None = None) -> Problem:
    ic = burgers_shock_formation_ic(cfg.t_shock, cfg.y_inf)
    _, geom = build_triangulated_grid(cfg.nx, cfg.nt, (0.0, 1.0, 0.0, 1.0), degree=1, spacetime=True)
    model = Burgers(cfg.eps if eps is None else eps, cfg.constitutive_choice, spacetime=True)
    bcs = {"left": Inflow([cfg.y_inf]), "bottom": Inflow(lambda X: ic(X[:, 0])),
           "right": Outflow(), "top": Outflow()}
    tc = {"left": SlidePlane((1.0, 0.0), 0.0), "right": SlidePlane((1.0, 0.0), 1.0),
          "bottom": SlidePlane((0.0, 1.0), 0.0), "top": SlidePlane((0.0, 1.0), 1.0)}
    return Problem(geom, model, cfg.p, bcs=bcs, tag_constraints=tc)


def solve_burgers(cfg: BurgersConfig = BurgersConfig()):
    """Returns ``(problem, state, report)``; the report covers every stage."""
    ic = burgers_shock_formation_ic(cfg.t_shock, cfg.y_inf)
    stages = [*cfg.eps_schedule, cfg.eps]
    problem = burgers_problem(cfg, stages[0])
    state = problem.disc.state_from_functions(lambda X: ic(X[:, 0]))
    total = IterationReport()
    for i, eps in enumerate(stages):
        problem = problem.with_model(Burgers(eps, cfg.constitutive_choice, spacetime=True))
        if i < len(stages) - 1:
            problem, state, rep = solve_stationary(problem, state, replace(cfg.solver, max_iter=cfg.stage_iterations))
            total.extend(rep)
            continue
        for scale, iters in cfg.relax or ((1.0, cfg.solver.max_iter),):
            problem, state, rep = solve_stationary(problem, state, scaled_regularization(cfg.solver, scale, iters))
            total.extend(rep)
            if rep.status == CONVERGED:
                break
    return problem, state, total


def solve_burgers_inviscid(cfg: BurgersConfig = BurgersConfig(), warm=None):
    """Inviscid variant warm-started from a viscous ``(problem, state)`` (solved here if omitted)."""
    if warm is None:
        warm = solve_burgers(cfg)[:2]
    problem, state = warm
    problem = problem.with_model(Burgers(0.0, cfg.constitutive_choice, spacetime=True))
    total = IterationReport()
    for scale, iters in cfg.inviscid_relax:
        problem, state, rep = solve_stationary(problem, state, scaled_regularization(cfg.solver, scale, iters))
        total.extend(rep)
        if rep.status == CONVERGED:
            break
    return problem, state, total


def scaled_regularization(config: SolverConfig, scale: float, max_iter: int) -> SolverConfig:
    """Copy of ``config`` with every regularisation weight multiplied by ``scale``."""
    return replace(config, lambda_y=config.lambda_y * scale, lambda_sigma=config.lambda_sigma * scale,
                   lambda_u=config.lambda_u * scale, elastic_weight=config.elastic_weight * scale,
                   max_iter=max_iter)


# ---------------------------------------------------------------------------
# 1D viscous shock
# ---------------------------------------------------------------------------


@dataclass
class ShockConfig:
    """Stationary Mach ``mach`` shock on ``domain`` centred near 0; mu = M / Re.

    The domain reaches further upstream because the upstream tail of the
    profile decays several times more slowly than the downstream one.
    """

    mach: float = 5.0
    reynolds: float = 1e3
    n_cells: int = 16
    p: int = 4
    domain: tuple = (-0.04, 0.01)
    initial_width: float = 0.002
    geometry_degree: int | None = None
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(
        lambda_u=1e-8, elastic_weight=1e-8, tol=1e-12, rtol=1e-7, max_iter=3000))

    @property
    def mu(self) -> float:
        return self.mach / self.reynolds


def shock_end_states(cfg: ShockConfig):
    """Conservative upstream and downstream states from the normal-shock relations."""
    fs = Freestream(cfg.mach)
    r = normal_shock(cfg.mach)
    model = NavierStokes(1, cfg.mu)
    y1 = model.state_from_primitive(fs.rho, np.array([fs.speed]), fs.pressure)
    y2 = model.state_from_primitive(fs.rho * r["rho"], np.array([fs.speed * r["u"]]), fs.pressure * r["p"])
    return y1, y2


def shock_problem(cfg: ShockConfig) -> Problem:
    pu = cfg.p if cfg.geometry_degree is None else cfg.geometry_degree
    _, geom = build_line_mesh(cfg.n_cells, cfg.domain[0], cfg.domain[1], degree=pu)
    y1, y2 = shock_end_states(cfg)
    model = NavierStokes(1, cfg.mu)
    return Problem(geom, model, cfg.p, bcs={"left": Inflow(y1), "right": Inflow(y2)}, tag_constraints={})


def solve_shock(cfg: ShockConfig = ShockConfig()):
    """Solve from a tanh profile between the end states; returns (problem, state, report)."""
    problem = shock_problem(cfg)
    y1, y2 = shock_end_states(cfg)

    def init(X):
        w = 0.5 * (1.0 + np.tanh(X[:, 0] / cfg.initial_width))
        return (1.0 - w)[:, None] * y1 + w[:, None] * y2

    state = problem.disc.state_from_functions(init)
    return solve_stationary(problem, state, cfg.solver)


# ---------------------------------------------------------------------------
# Case metrics
# ---------------------------------------------------------------------------


def burgers_profile_error(problem: Problem, state: DiscreteState, cfg: BurgersConfig, cache=None,
                          n_cells: int = 4096, stride: int = 4) -> float:
    """Mean absolute t=1 difference to the fine finite-volume reference."""
    from .oracles import burgers_reference
    from .postprocess import l1_error_on_line

    ic = burgers_shock_formation_ic(cfg.t_shock, cfg.y_inf)
    x, y, _ = burgers_reference(ic, cfg.eps, 1.0, n_cells, cache_dir=cache, richardson=False)
    x, y = x[::stride], y[::stride]
    return l1_error_on_line(problem.disc, state, x, y, fixed_coord=1.0 - 1e-12)


def facet_jumps(problem: Problem, state: DiscreteState, n_points: int = 5):
    """Per interior facet: midpoint, direction, length, max |[y]| and max |[dy/dn]|."""
    from .mesh import facet_parameterization, geometry_eval

    disc = problem.disc
    mesh = disc.geom.mesh
    geom = disc.geom.with_coords(state.u)
    t = np.linspace(0.05, 0.95, n_points)
    out = []
    for f in mesh.interior_facets:
        vals, grads, xs = [], [], []
        for side in ("left", "right"):
            par = facet_parameterization(mesh, f, side)
            xi = par.points(t)
            phi, dphi = disc.Y.eval(xi)
            c = par.cell
            v = phi @ state.y[c, 0]
            g = []
            for q in range(len(t)):
                x, J, _, _ = geometry_eval(geom, c, xi[q])
                # J maps reference-mesh coords; xi are unit-simplex coords of cell c
                A = mesh.cell_affine_jacobians()[c]
                Jxi = J @ A
                g.append(np.linalg.solve(Jxi.T, dphi[q].T @ state.y[c, 0]))
                if side == "left":
                    xs.append(x)
            vals.append(v)
            grads.append(np.array(g))
        xs = np.array(xs)
        tang = xs[-1] - xs[0]
        L = float(np.linalg.norm(tang))
        n = np.array([-tang[1], tang[0]]) / max(L, 1e-300)
        dv = np.abs(vals[0] - vals[1]).max()
        dg = np.abs((grads[0] - grads[1]) @ n).max()
        out.append((xs.mean(axis=0), tang / max(L, 1e-300), L / (t[-1] - t[0]), dv, dg))
    return out


def kink_trajectory(problem: Problem, state: DiscreteState, x_max: float = 0.5,
                    value_jump_tol: float = 0.05, keep: float = 0.25, min_time_component: float = 0.8):
    """Fit ``x = a + b t`` to the chain of facets carrying the derivative discontinuity.

    Candidate facets lie at ``x < x_max`` (left of the shock), carry a small
    value jump and are time-like (``|dt| >= min_time_component`` along the
    unit tangent).  The chain starts at the candidate with the largest
    normal-derivative jump and is extended through shared vertices, upwards
    and downwards, by the neighbour with the largest jump as long as that
    jump is at least ``keep`` times the seed's.  The line is fitted to the
    interior vertices of the chain.  Returns ``(b, a, n_facets)``.
    """
    mesh = problem.disc.geom.mesh
    if mesh.dim != 2:
        raise ValueError("kink tracking needs a space-time grid")
    rows = facet_jumps(problem, state)
    facets = mesh.interior_facets
    ok = [k for k, r in enumerate(rows)
          if r[0][0] < x_max and r[3] < value_jump_tol and abs(r[1][1]) >= min_time_component]
    if not ok:
        raise ValueError("no candidate facets for the derivative discontinuity")
    X = _vertex_positions(problem.disc.geom, state.u)
    ends = {k: mesh.facet_vertices[facets[k]] for k in ok}
    seed = max(ok, key=lambda k: rows[k][4])
    floor = keep * rows[seed][4]
    chain = [seed]
    for upward in (True, False):
        cur = seed
        while True:
            a, b = ends[cur]
            tip = max((a, b), key=lambda v: X[v, 1]) if upward else min((a, b), key=lambda v: X[v, 1])
            nxt = [k for k in ok if k not in chain and tip in ends[k] and rows[k][4] >= floor
                   and (X[ends[k], 1].max() > X[tip, 1] if upward else X[ends[k], 1].min() < X[tip, 1])]
            if not nxt:
                break
            cur = max(nxt, key=lambda k: rows[k][4])
            chain.append(cur)
    # vertices on the domain boundary sit at the under-resolved corner where the kink is born
    on_boundary = set(mesh.facet_vertices[mesh.boundary_facets].ravel().tolist())
    verts = [v for v in np.unique(np.concatenate([ends[k] for k in chain])) if v not in on_boundary]
    if len(verts) < 3:
        raise ValueError("derivative discontinuity not resolved by enough facets")
    P = X[verts]
    b, a = np.polyfit(P[:, 1], P[:, 0], 1)
    return float(b), float(a), len(chain)


def _vertex_positions(geom, coords: np.ndarray) -> np.ndarray:
    """Physical positions of the reference-mesh vertices."""
    ref = geom.ref_coords
    idx = [int(np.argmin(np.linalg.norm(ref - v, axis=1))) for v in geom.mesh.vertices]
    return np.asarray(coords).reshape(ref.shape)[idx]


def shock_metrics(problem: Problem, state: DiscreteState, cfg: ShockConfig, n: int = 2001) -> dict:
    """Density comparison with the shock-structure ODE after aligning mid-density points."""
    from .oracles import viscous_shock_ode
    from .postprocess import sample

    x = np.linspace(cfg.domain[0], cfg.domain[1], n)
    x[0] += 1e-12
    x[-1] -= 1e-12
    rho = sample(problem.disc, state, x[:, None])[:, 0]
    ref = viscous_shock_ode(cfg.mach, cfg.reynolds)
    rho_mid = 0.5 * (ref.upstream["rho"] + ref.downstream["rho"])
    k = int(np.argmax(rho >= rho_mid))
    if k == 0:
        raise ValueError("discrete density never crosses the mid value")
    xc = x[k - 1] + (rho_mid - rho[k - 1]) * (x[k] - x[k - 1]) / (rho[k] - rho[k - 1])
    rho_ref = ref.density_at(x - xc)
    rel = np.abs(rho - rho_ref) / rho_ref
    ends = sample(problem.disc, state, np.array([[x[0]], [x[-1]]]))[:, 0]
    return {"density_max_rel_error": float(rel.max()), "shock_center": float(xc),
            "density_ratio": float(ends[1] / ends[0])}
