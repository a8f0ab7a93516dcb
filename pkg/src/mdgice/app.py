"""Case runner: initialize, solve, postprocess and emit artifacts."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cases
from .config import CaseConfig, dump_config
from .output import cell_table, write_csv, write_mesh, write_vtk, _write
from .solver import BUDGET, CONVERGED, DIVERGED, INVALID_GEOMETRY, MAX_ITER, STALLED

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BAD_INPUT = 2
EXIT_DIVERGED = 3
EXIT_INVALID_GEOMETRY = 4
EXIT_BUDGET = 5
EXIT_MAX_ITER = 6

STATUS_EXIT = {
    CONVERGED: EXIT_OK,
    DIVERGED: EXIT_DIVERGED,
    STALLED: EXIT_DIVERGED,
    INVALID_GEOMETRY: EXIT_INVALID_GEOMETRY,
    BUDGET: EXIT_BUDGET,
    MAX_ITER: EXIT_MAX_ITER,
}


def cache_dir() -> Path:
    return Path(os.environ.get("MDGICE_CACHE", Path.home() / ".cache" / "mdgice"))


@dataclass
class RunResult:
    exit_code: int
    status: str
    metrics: dict
    problem: object = None
    state: object = None
    report: object = None
    artifacts: list = field(default_factory=list)


def _boundary_layer_config(cfg: CaseConfig) -> cases.BoundaryLayerConfig:
    p = cfg.params
    return cases.BoundaryLayerConfig(
        pe=float(p.get("pe", 100.0)), n_cells=cfg.mesh.nx, geometry_degree=cfg.p_u or 1,
        pe_schedule=tuple(cfg.continuation), solver=cfg.solver)


def _burgers_config(cfg: CaseConfig) -> cases.BurgersConfig:
    p = cfg.params
    return cases.BurgersConfig(
        nx=cfg.mesh.nx, nt=cfg.mesh.ny or cfg.mesh.nx, p=cfg.p_y, eps=float(p.get("eps", 1e-3)),
        t_shock=float(p.get("t_shock", 0.5)), y_inf=float(p.get("y_inf", 0.2)),
        eps_schedule=tuple(cfg.continuation), stage_iterations=int(p.get("stage_iterations", 300)),
        relax=_phases(p, "relax"), inviscid_relax=_phases(p, "inviscid_relax"), solver=cfg.solver)


def _phases(params: dict, key: str) -> tuple:
    if key not in params:
        return getattr(cases.BurgersConfig, key)
    try:
        return tuple((float(scale), int(iters)) for scale, iters in params[key])
    except (TypeError, ValueError) as exc:
        raise ValueError(f"params.{key} must be a list of [scale, iterations] pairs") from exc


def _shock_config(cfg: CaseConfig) -> cases.ShockConfig:
    p = cfg.params
    lo, hi = cfg.mesh.domain[:2]
    if not lo < 0.0 < hi:
        raise ValueError("viscous shock domain must contain x = 0")
    return cases.ShockConfig(
        mach=float(p.get("mach", 5.0)), reynolds=float(p.get("reynolds", 1e3)), n_cells=cfg.mesh.nx,
        p=cfg.p_y, domain=(float(lo), float(hi)), initial_width=float(p.get("initial_width", 0.002)),
        geometry_degree=cfg.p_u or None, solver=cfg.solver)


def solve_case(cfg: CaseConfig):
    """Run the solver for ``cfg``; returns ``(problem, state, report, metrics)``."""
    if cfg.case == "advection_diffusion":
        bl = _boundary_layer_config(cfg)
        res = cases.solve_boundary_layer(cfg.p_y, bl)
        metrics = {"p": cfg.p_y, "pe": bl.pe, "error_mdg": res.error, "error_projection": res.projection_error,
                   "ratio": res.error / res.projection_error}
        return res.problem, res.state, res.report, metrics
    if cfg.case == "burgers":
        bc = _burgers_config(cfg)
        problem, state, report = cases.solve_burgers(bc)
        metrics = {"p": bc.p, "eps": bc.eps, "cells": problem.disc.mesh.n_cells}
        if bc.eps > 0 and cfg.params.get("reference", True):
            metrics["l1_error_t1"] = cases.burgers_profile_error(problem, state, bc, cache=cache_dir())
        if cfg.params.get("inviscid", False):
            # the viscous solution only serves as the starting point
            problem, state, report = cases.solve_burgers_inviscid(bc, (problem, state))
            try:
                slope, intercept, n = cases.kink_trajectory(problem, state)
            except ValueError:
                slope, intercept, n = float("nan"), float("nan"), 0
            metrics.update(eps=0.0, kink_slope=slope, kink_intercept=intercept, kink_facets=n)
        return problem, state, report, metrics
    sc = _shock_config(cfg)
    problem, state, report = cases.solve_shock(sc)
    metrics = {"p": sc.p, "mach": sc.mach, "reynolds": sc.reynolds}
    metrics.update(cases.shock_metrics(problem, state, sc))
    return problem, state, report, metrics


def emit(cfg: CaseConfig, problem, state, report, metrics, out_dir: Path) -> list[Path]:
    """Write config echo, iteration log, metrics, solution VTK and mesh dump."""
    out_dir = Path(out_dir)
    files = [
        _write(out_dir / "config.toml", dump_config(cfg)),
        _write(out_dir / "iterations.csv", report.to_csv()),
    ]
    keys = sorted(metrics)
    files.append(write_csv(out_dir / "metrics.csv", ["status", *keys],
                           [[report.status, *[metrics[k] for k in keys]]]))
    names = None
    if cfg.case == "viscous_shock":
        names = ["rho", "rho_v", "rho_E"]
    files.append(write_vtk(out_dir / "solution.vtk", problem.disc, state, names=names))
    files.append(write_mesh(out_dir / "mesh.txt", problem.disc, state))
    if problem.disc.geom.mesh.dim == 1:
        h, rows = cell_table(problem.disc, state)
        files.append(write_csv(out_dir / "cells.csv", h, rows))
    meta = {"name": cfg.name, "case": cfg.case, "status": report.status, "iterations": report.iterations,
            "elapsed": round(report.elapsed, 3), "params": cfg.params, "metrics": metrics}
    files.append(_write(out_dir / "run.json", json.dumps(meta, indent=2, sort_keys=True, default=float) + "\n"))
    return files


def run_case(cfg: CaseConfig, out_dir: str | Path | None = None, frozen_geometry: bool | None = None) -> RunResult:
    """Solve, postprocess and write artifacts; never raises for solver outcomes."""
    if frozen_geometry is not None:
        cfg = replace(cfg, solver=replace(cfg.solver, frozen_geometry=frozen_geometry))
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    try:
        problem, state, report, metrics = solve_case(cfg)
    except ValueError as exc:
        return RunResult(EXIT_BAD_INPUT, "bad_input", {"error": str(exc)})
    files = emit(cfg, problem, state, report, metrics, out)
    code = STATUS_EXIT.get(report.status, EXIT_ERROR)
    return RunResult(code, report.status, metrics, problem, state, report, files)


def study(cfg: CaseConfig, p_list, out_dir: str | Path | None = None) -> tuple[cases.ConvergenceStudy, Path]:
    """p-convergence table for the advection-diffusion case."""
    if cfg.case != "advection_diffusion":
        raise ValueError("convergence study needs the advection-diffusion case")
    res = cases.convergence_study(_boundary_layer_config(cfg), p_list)
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    rows = res.table()
    header = ["p", "dofs", "error_mdg", "error_projection", "iterations", "status"]
    path = write_csv(out / "convergence.csv", header, [[r[k] for k in header] for r in rows])
    write_csv(out / "slopes.csv", ["mdg_slope", "projection_slope"], [[res.mdg_slope, res.projection_slope]])
    return res, path
