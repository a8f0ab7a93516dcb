"""Space-time Burgers shock formation: viscous solve, t=1 profile error and inviscid kink speed."""

import argparse
import time
from pathlib import Path

from mdgice.cases import (
    BurgersConfig,
    burgers_profile_error,
    kink_trajectory,
    solve_burgers,
    solve_burgers_inviscid,
)
from mdgice.mesh import min_jacobian_determinants
from mdgice.output import write_mesh, write_vtk


def summary(tag, problem, state, report, elapsed):
    last = report.records[-1]
    det = min_jacobian_determinants(problem.geom, state.u).min()
    print(f"{tag}: {report.status} after {report.iterations} its, {elapsed:.0f} s, residual {last.residual:.3e}, "
          f"||J^T r|| {last.stationarity:.2e}, min det J {det:.1e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=10, help="cells per direction")
    ap.add_argument("--p", type=int, default=3)
    ap.add_argument("--eps", type=float, default=1e-3)
    ap.add_argument("--no-inviscid", action="store_true")
    ap.add_argument("--cache", default=None, help="directory for the finite-volume reference")
    ap.add_argument("--out", default="out/burgers")
    args = ap.parse_args()

    cfg = BurgersConfig(nx=args.n, nt=args.n, p=args.p, eps=args.eps)
    out = Path(args.out)
    t0 = time.perf_counter()
    problem, state, report = solve_burgers(cfg)
    summary(f"eps={cfg.eps:g}", problem, state, report, time.perf_counter() - t0)
    print(f"t=1 L1 error vs reference: {burgers_profile_error(problem, state, cfg, cache=args.cache):.3e}")
    write_vtk(out / "viscous.vtk", problem.disc, state)
    write_mesh(out / "viscous_mesh.txt", problem.disc, state)

    if not args.no_inviscid:
        t0 = time.perf_counter()
        problem, state, report = solve_burgers_inviscid(cfg, (problem, state))
        summary("eps=0", problem, state, report, time.perf_counter() - t0)
        slope, intercept, n = kink_trajectory(problem, state)
        print(f"kink trajectory x = {intercept:.4f} + {slope:.4f} t from {n} facets")
        write_vtk(out / "inviscid.vtk", problem.disc, state)
    print("wrote", out)


if __name__ == "__main__":
    main()
