"""Regularized Levenberg-Marquardt iteration for the residual least-squares problem."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import DiscreteState, Discretization, assemble
from .geometry_bc import BoundaryConstraints
from .mesh import GeometryField, InvalidGeometryError, RefinementBudgetError, is_valid
from .physics import AdmissibilityError

CONVERGED = "converged"
MAX_ITER = "max_iterations"
STALLED = "stalled"
DIVERGED = "diverged"
INVALID_GEOMETRY = "invalid_geometry"
BUDGET = "refinement_budget"


@dataclass
class SolverConfig:
    """Regularisation weights, tolerances and schedules.

    ``lambda_u`` and ``elastic_weight`` are scaled together by the adaptive
    damping factor, as are ``lambda_y`` and ``lambda_sigma`` when positive.
    """

    lambda_y: float = 0.0
    lambda_sigma: float = 0.0
    lambda_u: float = 1e-4
    elastic_weight: float = 1e-4
    lame: tuple = (1.0, 1.0)
    elastic_on_current: bool = True
    tol: float = 1e-10
    rtol: float = 0.0
    residual_tol: float = 0.0
    stall_rtol: float = 1e-6
    max_iter: int = 200
    grow: float = 10.0
    shrink: float = 2.0
    max_damping: float = 1e12
    max_rejections: int = 25
    frozen_geometry: bool = False
    continuation: tuple = ()
    refine: bool = True
    anisotropy_threshold: float = 50.0
    refinement_budget: int = 4000
    verbose: bool = False

    def __post_init__(self):
        for name in ("lambda_y", "lambda_sigma", "lambda_u", "elastic_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.frozen_geometry and self.lambda_u <= 0:
            raise ValueError("lambda_u must be positive when the geometry moves")


@dataclass
class IterationRecord:
    iteration: int
    residual: float
    stationarity: float
    damping: float
    step_y: float
    step_sigma: float
    step_u: float
    cells: int
    accepted: bool
    event: str = ""


@dataclass
class IterationReport:
    records: list = field(default_factory=list)
    status: str = ""
    iterations: int = 0
    elapsed: float = 0.0
    refinements: list = field(default_factory=list)

    @property
    def final_residual(self) -> float:
        return self.records[-1].residual if self.records else float("nan")

    @property
    def final_stationarity(self) -> float:
        return self.records[-1].stationarity if self.records else float("nan")

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "residual", "stationarity", "damping", "step_y", "step_sigma",
                    "step_u", "cells", "accepted", "event"])
        for r in self.records:
            w.writerow([r.iteration, f"{r.residual:.12e}", f"{r.stationarity:.12e}", f"{r.damping:.6e}",
                        f"{r.step_y:.6e}", f"{r.step_sigma:.6e}", f"{r.step_u:.6e}", r.cells,
                        int(r.accepted), r.event])
        return buf.getvalue()

    def extend(self, other: "IterationReport"):
        base = self.records[-1].iteration + 1 if self.records else 0
        for r in other.records:
            r.iteration += base
            self.records.append(r)
        self.status = other.status
        self.iterations += other.iterations
        self.elapsed += other.elapsed
        self.refinements.extend(other.refinements)


# ---------------------------------------------------------------------------
# Problem wrapper
# ---------------------------------------------------------------------------


class Problem:
    """Discretization plus geometric constraints; rebuildable after refinement.

    Parameters
    ----------
    geom : initial geometry field (its coordinates are the initial grid).
    model, p_y, p_sigma, bcs, source : forwarded to :class:`Discretization`.
    tag_constraints : boundary tag -> geometric constraint (see
        :meth:`BoundaryConstraints.from_tags`); ``None`` freezes nothing.
    """

    def __init__(self, geom: GeometryField, model, p_y: int, p_sigma: int | None = None,
                 bcs: dict | None = None, tag_constraints: dict | None = None, source=None):
        self.geom = geom
        self.model = model
        self.p_y = p_y
        self.p_sigma = p_sigma
        self.bcs = bcs
        self.tag_constraints = tag_constraints
        self.source = source
        self.disc = Discretization(geom, model, p_y, p_sigma, bcs, source)
        self.constraints = (BoundaryConstraints.from_tags(geom, tag_constraints)
                            if tag_constraints is not None else None)

    def with_geometry(self, geom: GeometryField) -> "Problem":
        return Problem(geom, self.model, self.p_y, self.p_sigma, self.bcs, self.tag_constraints, self.source)

    def with_model(self, model) -> "Problem":
        return Problem(self.geom, model, self.p_y, self.p_sigma, self.bcs, self.tag_constraints, self.source)

    def project(self, state: DiscreteState) -> DiscreteState:
        if self.constraints is None:
            return state
        return DiscreteState(state.y, state.sigma, self.constraints.project(state.u))

    def assemble(self, state: DiscreteState, jacobian: bool = True):
        return assemble(self.disc, state, self.constraints, jacobian)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def elastic_operator(geom: GeometryField, lame=(1.0, 1.0), coords=None) -> sp.csr_matrix:
    """Linear-elasticity stiffness on the geometry space.

    Assembled on the configuration ``coords`` (default: the reference
    configuration ``geom.ref_coords``) with Lame pair ``(lambda, mu)``.
    Unknown ordering matches the flattened ``(node, component)`` vector.
    """
    from .basis import quadrature_rule

    lam, mu = lame
    X = geom.ref_coords if coords is None else coords
    rule = quadrature_rule(geom.mesh.kind, max(2 * geom.degree, 1))
    _, J, det = geom.evaluate(rule.points, X)
    if np.any(det <= 0):
        raise InvalidGeometryError("elastic operator needs a valid configuration")
    _, dphi = geom.space.eval(rule.points)
    Jinv = np.linalg.inv(J)
    G = np.einsum("qnk,cqke->cqne", dphi, Jinv)  # physical gradients
    wd = rule.weights[None, :] * det
    d = geom.dim
    eye = np.eye(d)
    # K[(g,e),(h,f)] = lam dg_e dh_f + mu (delta_ef grad g . grad h + dg_f dh_e)
    K = (lam * np.einsum("cq,cqge,cqhf->cgehf", wd, G, G)
         + mu * np.einsum("cq,ef,cqgk,cqhk->cgehf", wd, eye, G, G)
         + mu * np.einsum("cq,cqgf,cqhe->cgehf", wd, G, G))
    nc, ng = geom.cell_nodes.shape
    idx = (geom.cell_nodes[:, :, None] * d + np.arange(d)).reshape(nc, ng * d)
    K = K.reshape(nc, ng * d, ng * d)
    rows = np.broadcast_to(idx[:, :, None], K.shape).ravel()
    cols = np.broadcast_to(idx[:, None, :], K.shape).ravel()
    n = geom.n_nodes * d
    return sp.csr_matrix((K.ravel(), (rows, cols)), shape=(n, n))


class FactorizationError(RuntimeError):
    pass


def solve_spd(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Solve a sparse symmetric positive definite system by a symmetric-mode LU.

    Diagonal pivoting keeps the factorization symmetric; a non-positive
    pivot means ``A`` is not positive definite.
    """
    A = sp.csc_matrix(A)
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise FactorizationError(str(exc)) from exc
    piv = lu.U.diagonal()
    if np.any(piv <= 0) or not np.all(np.isfinite(piv)):
        raise FactorizationError("normal matrix is not positive definite")
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise FactorizationError("non-finite solution")
    return x


def regularization_diagonal(disc: Discretization, config: SolverConfig, factor: float) -> np.ndarray:
    diag = np.zeros(disc.n_cols)
    a, b = disc.col_blocks["y"]
    diag[a:b] = config.lambda_y * (factor if config.lambda_y > 0 else 1.0)
    a, b = disc.col_blocks["sigma"]
    diag[a:b] = config.lambda_sigma * (factor if config.lambda_sigma > 0 else 1.0)
    a, b = disc.col_blocks["u"]
    diag[a:b] = config.lambda_u * factor
    return diag


def lm_step(jac: sp.spmatrix, residual: np.ndarray, diag: np.ndarray,
            elastic: sp.spmatrix | None = None, elastic_weight: float = 0.0,
            geometry_slice: slice | None = None) -> np.ndarray:
    """Solve (J^T J + diag + w E) delta = -J^T r.

    ``elastic`` acts on the ``geometry_slice`` of the unknown vector.
    """
    jac = sp.csr_matrix(jac)
    A = (jac.T @ jac).tocsr() + sp.diags(diag)
    if elastic is not None and elastic_weight > 0:
        s = geometry_slice
        if s.stop != jac.shape[1]:
            raise ValueError("geometry block must be trailing")
        A = A + elastic_weight * sp.block_diag([sp.csr_matrix((s.start, s.start)), elastic], format="csr")
    return solve_spd(A, -(jac.T @ residual))


# ---------------------------------------------------------------------------
# Iteration
# ---------------------------------------------------------------------------


def _block_norms(disc, delta):
    out = []
    for name in ("y", "sigma", "u"):
        a, b = disc.col_blocks[name]
        out.append(float(np.linalg.norm(delta[a:b])))
    return out


def solve_stationary(problem: Problem, state: DiscreteState, config: SolverConfig = SolverConfig(),
                     refine_fn=None, log=None):
    """Iterate damped Gauss-Newton steps until ``||J^T r||`` drops below tolerance.

    Parameters
    ----------
    problem : :class:`Problem` (may be replaced after refinement).
    state : initial state; its geometry is projected by b first.
    refine_fn : optional ``(problem, state, config) -> (problem, state, events)``
        called after accepted steps; defaults to :func:`mdgice.refine.validity_check_and_refine`.

    Returns
    -------
    (problem, state, report)
    """
    from .refine import validity_check_and_refine

    if refine_fn is None and config.refine:
        refine_fn = validity_check_and_refine
    t0 = time.perf_counter()
    report = IterationReport()
    state = problem.project(state)
    if not is_valid(problem.geom, state.u):
        report.status = INVALID_GEOMETRY
        return problem, state, report

    def build(pr):
        disc = pr.disc
        if config.frozen_geometry:
            E = None
        else:
            E = None if config.elastic_on_current else elastic_operator(pr.geom, config.lame)
        return disc, E

    disc, E = build(problem)
    try:
        sys_ = problem.assemble(state)
    except (AdmissibilityError, InvalidGeometryError):
        report.status = INVALID_GEOMETRY
        return problem, state, report
    factor = 1.0
    stat0 = None
    it = 0
    step_norms = [0.0, 0.0, 0.0]
    accepted = True
    event = "start"
    while True:
        r = sys_.residual
        Jm = sys_.jacobian
        a_u, b_u = disc.col_blocks["u"]
        if config.frozen_geometry:
            Jm = Jm[:, :a_u]
        g = Jm.T @ r
        stat = float(np.linalg.norm(g))
        rn = float(np.linalg.norm(r))
        stat0 = stat if stat0 is None else stat0
        report.records.append(IterationRecord(it, rn, stat, factor, *step_norms,
                                              problem.disc.mesh.n_cells, accepted, event))
        if config.verbose:
            print(f"it {it:4d} |r| {rn:.3e} |J'r| {stat:.3e} damping {factor:.1e} {event}")
        if log is not None:
            log(report.records[-1])
        if stat <= config.tol or stat <= config.rtol * stat0 or rn <= config.residual_tol:
            report.status = CONVERGED
            break
        if it >= config.max_iter:
            report.status = MAX_ITER
            break
        it += 1
        # --- try steps with increasing damping
        success = False
        rejections = 0
        event = ""
        while factor <= config.max_damping:
            M = a_u if config.frozen_geometry else disc.n_cols
            diag = regularization_diagonal(disc, config, factor)[:M]
            try:
                if config.frozen_geometry:
                    delta = lm_step(Jm, r, diag)
                    delta = np.concatenate([delta, np.zeros(b_u - a_u)])
                else:
                    Ep = None
                    if config.elastic_on_current:
                        E = elastic_operator(problem.geom, config.lame, state.u)
                    if E is not None and problem.constraints is not None:
                        Bp = problem.constraints.derivative_matrix(state.u)
                        Ep = (Bp.T @ E @ Bp).tocsr()
                    elif E is not None:
                        Ep = E
                    delta = lm_step(Jm, r, diag, Ep, config.elastic_weight * factor,
                                    slice(a_u, b_u))
            except Exception as exc:  # factorization failure: damp harder
                if not isinstance(exc, (RuntimeError, ValueError)):
                    raise
                factor *= config.grow
                continue
            trial = disc.unpack(state.pack() + delta)
            trial = problem.project(trial)
            trial_problem, trial_events = problem, []
            try:
                if not is_valid(problem.geom, trial.u):
                    if refine_fn is None or config.frozen_geometry:
                        raise InvalidGeometryError("trial step inverts cells")
                    # repair the trial (linear projection, then splitting) before judging it
                    trial_problem, trial, trial_events = refine_fn(problem, trial, config)
                trial_sys = trial_problem.assemble(trial)
            except (AdmissibilityError, InvalidGeometryError):
                factor *= config.grow
                rejections += 1
                continue
            except RefinementBudgetError:
                report.status = BUDGET
                success = None
                break
            if trial_sys.norm < rn:
                success = True
                break
            factor *= config.grow
            rejections += 1
            if rejections > config.max_rejections:
                break
        if success is None:
            break
        if not success:
            # no representable decrease left: a minimum if stationarity already fell far
            report.status = CONVERGED if stat <= config.stall_rtol * stat0 else STALLED
            break
        step_norms = _block_norms(disc, delta)
        state = trial
        sys_ = trial_sys
        factor = max(1.0, factor / config.shrink)
        accepted = True
        if trial_events:
            report.refinements.extend(trial_events)
            event = ";".join(trial_events)
            if trial_problem is not problem:
                problem = trial_problem
                disc, E = build(problem)
            continue
        if refine_fn is not None and not config.frozen_geometry:
            try:
                problem2, state2, events = refine_fn(problem, state, config)
            except RefinementBudgetError:
                report.status = BUDGET
                break
            if events:
                report.refinements.extend(events)
                event = ";".join(events)
                problem, state = problem2, state2
                disc, E = build(problem)
                sys_ = problem.assemble(state)
    report.iterations = it
    report.elapsed = time.perf_counter() - t0
    return problem, state, report


def solve_continuation(problem: Problem, state: DiscreteState, models, config: SolverConfig = SolverConfig(),
                       refine_fn=None):
    """Solve a sequence of models (e.g. decreasing viscosity), warm-starting each stage."""
    total = IterationReport()
    for model in models:
        problem = problem.with_model(model)
        problem, state, rep = solve_stationary(problem, state, config, refine_fn)
        total.extend(rep)
        if rep.status not in (CONVERGED, MAX_ITER, STALLED):
            break
    return problem, state, total
