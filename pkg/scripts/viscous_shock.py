"""Mach-5 viscous shock on 16 line cells against the shock-structure ODE."""

import argparse
import time
from pathlib import Path

import numpy as np

from mdgice.cases import ShockConfig, shock_metrics, solve_shock
from mdgice.oracles import viscous_shock_ode
from mdgice.output import write_csv
from mdgice.postprocess import sample


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mach", type=float, default=5.0)
    ap.add_argument("--reynolds", type=float, default=1e3)
    ap.add_argument("--cells", type=int, default=16)
    ap.add_argument("--p", type=int, default=4)
    ap.add_argument("--out", default="out/shock")
    args = ap.parse_args()

    cfg = ShockConfig(mach=args.mach, reynolds=args.reynolds, n_cells=args.cells, p=args.p)
    t0 = time.perf_counter()
    problem, state, report = solve_shock(cfg)
    elapsed = time.perf_counter() - t0
    m = shock_metrics(problem, state, cfg)
    print(f"{report.status} after {report.iterations} its, {elapsed:.1f} s")
    print(f"max density rel. error {m['density_max_rel_error']:.2e}, ratio {m['density_ratio']:.9f}, "
          f"center {m['shock_center']:.3e}")

    x = np.linspace(cfg.domain[0] + 1e-12, cfg.domain[1] - 1e-12, 501)
    rho = sample(problem.disc, state, x[:, None])[:, 0]
    ref = viscous_shock_ode(cfg.mach, cfg.reynolds).density_at(x - m["shock_center"])
    path = write_csv(Path(args.out) / "density.csv", ["x", "rho", "rho_ode"], np.column_stack([x, rho, ref]).tolist())
    print("wrote", path)


if __name__ == "__main__":
    main()
