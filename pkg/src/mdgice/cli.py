"""Command line: ``mdgice run|study|oracle|check-jacobian``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .app import EXIT_BAD_INPUT, EXIT_ERROR, EXIT_OK, run_case, study
from .config import TEMPLATES, ConfigError, dump_config, load_config


def _threads(n):
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def _load(args):
    if args.config:
        return load_config(args.config)
    return TEMPLATES[args.template]


def cmd_run(args) -> int:
    cfg = _load(args)
    if args.p is not None:
        cfg = replace(cfg, p_y=args.p)
    res = run_case(cfg, args.out, frozen_geometry=True if args.frozen_geometry else None)
    print(json.dumps({"status": res.status, "exit_code": res.exit_code, "metrics": res.metrics},
                     sort_keys=True, default=float))
    return res.exit_code


def cmd_study(args) -> int:
    cfg = _load(args)
    res, path = study(cfg, range(args.p_min, args.p_max + 1), args.out)
    for row in res.table():
        print(f"p={row['p']} mdg={row['error_mdg']:.4e} projection={row['error_projection']:.4e} {row['status']}")
    print(f"slopes: mdg={res.mdg_slope:.3f} projection={res.projection_slope:.3f}  ({path})")
    return EXIT_OK


def cmd_oracle(args) -> int:
    from . import oracles

    if args.which == "stagnation":
        p_stag, cp, rho_w, T_w = oracles.stagnation_reference(args.mach)
        print(json.dumps({"p_stag": p_stag, "cp": cp, "rho_wall": rho_w, "T_wall": T_w}))
    elif args.which == "shock":
        sol = oracles.viscous_shock_ode(args.mach, args.reynolds)
        for x, r in zip(sol.x[:: max(1, len(sol.x) // 50)], sol.rho[:: max(1, len(sol.x) // 50)]):
            print(f"{x:.10e} {r:.10e}")
    elif args.which == "boundary-layer":
        for x in np.linspace(0, 1, 11):
            print(f"{x:.2f} {float(oracles.exact_advection_diffusion(x, args.pe)):.12e}")
    return EXIT_OK


def cmd_check_jacobian(args) -> int:
    from .assembly import jacobian_check
    from .solver import Problem
    from . import cases

    rng = np.random.default_rng(args.seed)
    cfg = _load(args)
    if cfg.case == "advection_diffusion":
        problem = cases.boundary_layer_problem(cfg.p_y, cases.BoundaryLayerConfig(n_cells=cfg.mesh.nx))
        state = problem.disc.state_from_functions(lambda x: x[:, 0] ** 2)
    elif cfg.case == "burgers":
        problem = cases.burgers_problem(replace(cases.BurgersConfig(), nx=3, nt=3, p=min(cfg.p_y, 2)))
        state = problem.disc.state_from_functions(lambda X: 0.5 + 0.2 * np.sin(X[:, 0] + X[:, 1]))
    else:
        problem = cases.shock_problem(replace(cases.ShockConfig(), n_cells=3, p=min(cfg.p_y, 2)))
        y1, y2 = cases.shock_end_states(cases.ShockConfig())
        state = problem.disc.state_from_functions(lambda X: y1 + (y2 - y1) * (0.5 + X[:, :1] / 0.1))
    z = state.pack()
    z = z + 1e-3 * rng.standard_normal(z.shape) * np.maximum(np.abs(z), 1e-2)
    state = problem.disc.unpack(z)
    state = problem.project(state)
    res = jacobian_check(problem.disc, state, problem.constraints)
    print(json.dumps(res, sort_keys=True))
    return EXIT_OK if res["max"] < args.tol else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mdgice", description="Moving discontinuous Galerkin solver with interface condition enforcement.")
    ap.add_argument("--threads", type=int, default=int(os.environ.get("MDGICE_THREADS", "0")),
                    help="BLAS thread count (env MDGICE_THREADS)")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_cfg(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--config", help="TOML case file")
        g.add_argument("--template", choices=sorted(TEMPLATES), default="advection_diffusion")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")

    p = sub.add_parser("run", help="solve one case and write artifacts")
    add_cfg(p)
    p.add_argument("--p", type=int, default=None, help="override the state degree")
    p.add_argument("--frozen-geometry", action="store_true", help="static-grid least-squares solve")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("study", help="p-convergence table for the boundary layer")
    add_cfg(p)
    p.add_argument("--p-min", type=int, default=1)
    p.add_argument("--p-max", type=int, default=6)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("oracle", help="print reference values")
    p.add_argument("which", choices=["stagnation", "shock", "boundary-layer"])
    p.add_argument("--mach", type=float, default=5.0)
    p.add_argument("--reynolds", type=float, default=1e3)
    p.add_argument("--pe", type=float, default=100.0)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("check-jacobian", help="compare the assembled Jacobian with finite differences")
    add_cfg(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_check_jacobian)

    p = sub.add_parser("template", help="print a case template as TOML")
    p.add_argument("name", choices=sorted(TEMPLATES))
    p.set_defaults(func=lambda a: print(dump_config(TEMPLATES[a.name]), end="") or EXIT_OK)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_BAD_INPUT if exc.code else EXIT_OK
    _threads(args.threads)
    try:
        return int(args.func(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except KeyboardInterrupt:  # pragma: no cover
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
