"""Independent reference solutions used to validate the solver.

None of these routines touch the finite element code: they are closed-form
expressions, an ODE integration, and a finite-volume scheme.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from .physics import GAMMA, GAS_CONSTANT, PRANDTL


# ---------------------------------------------------------------------------
# Steady boundary layer
# ---------------------------------------------------------------------------


def exact_advection_diffusion(x, Pe: float):
    """(1 - exp(x Pe)) / (1 - exp(Pe)) evaluated as ``exp(Pe (x - 1)) expm1(-Pe x) / expm1(-Pe)``.

    The rearrangement never overflows and stays accurate for tiny ``Pe``.
    """
    if Pe <= 0:
        raise ValueError("Pe must be positive")
    x = np.asarray(x, dtype=float)
    return np.exp(Pe * (x - 1.0)) * np.expm1(-Pe * x) / np.expm1(-Pe)


def exact_advection_diffusion_dx(x, Pe: float):
    x = np.asarray(x, dtype=float)
    return Pe * np.exp(Pe * (x - 1.0)) / (-np.expm1(-Pe))


# ---------------------------------------------------------------------------
# Normal shock and stagnation relations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Freestream:
    """Nondimensional freestream: rho = 1, sound speed = 1, speed = M."""

    mach: float
    gamma: float = GAMMA
    gas_constant: float = GAS_CONSTANT

    @property
    def rho(self) -> float:
        return 1.0

    @property
    def speed(self) -> float:
        return self.mach

    @property
    def pressure(self) -> float:
        return 1.0 / self.gamma

    @property
    def temperature(self) -> float:
        return 1.0 / (self.gamma * self.gas_constant)


def normal_shock(M: float, gamma: float = GAMMA):
    """Downstream/upstream ratios (rho, u, p, T) and downstream Mach number."""
    if M <= 1:
        raise ValueError("normal shock needs M > 1")
    g = gamma
    rho = (g + 1) * M ** 2 / ((g - 1) * M ** 2 + 2)
    p = 1 + 2 * g / (g + 1) * (M ** 2 - 1)
    M2 = math.sqrt((1 + 0.5 * (g - 1) * M ** 2) / (g * M ** 2 - 0.5 * (g - 1)))
    return {"rho": rho, "u": 1 / rho, "p": p, "T": p / rho, "M2": M2}


def rayleigh_pitot_ratio(M: float, gamma: float = GAMMA) -> float:
    """Stagnation pressure behind a normal shock over the upstream static pressure."""
    g = gamma
    a = ((g + 1) ** 2 * M ** 2 / (4 * g * M ** 2 - 2 * (g - 1))) ** (g / (g - 1))
    return a * (1 - g + 2 * g * M ** 2) / (g + 1)


def stagnation_reference(M: float = 5.0, gamma: float = GAMMA, gas_constant: float = GAS_CONSTANT,
                         wall_temperature_ratio: float = 2.5):
    """Inviscid stagnation-point values for the nondimensional freestream.

    Returns ``(p_stag, C_p, rho_wall, T_wall)`` with ``T_wall`` equal to
    ``wall_temperature_ratio`` times the freestream temperature.
    """
    if M <= 1:
        raise ValueError("stagnation reference needs supersonic M > 1")
    fs = Freestream(M, gamma, gas_constant)
    p_stag = fs.pressure * rayleigh_pitot_ratio(M, gamma)
    cp = (p_stag - fs.pressure) / (0.5 * fs.rho * fs.speed ** 2)
    T_wall = wall_temperature_ratio * fs.temperature
    rho_wall = p_stag / (gas_constant * T_wall)
    return p_stag, cp, rho_wall, T_wall


# ---------------------------------------------------------------------------
# Viscous shock structure
# ---------------------------------------------------------------------------


@dataclass
class ShockODESolution:
    x: np.ndarray
    rho: np.ndarray
    v: np.ndarray
    T: np.ndarray
    p: np.ndarray
    tau_nn: np.ndarray
    q_n: np.ndarray
    upstream: dict
    downstream: dict
    mu: float
    k: float

    @property
    def mass_flux(self) -> np.ndarray:
        return self.rho * self.v

    def density_at(self, x) -> np.ndarray:
        return np.interp(x, self.x, self.rho)


def viscous_shock_ode(M: float = 5.0, Re: float = 1e3, Pr: float = PRANDTL, gamma: float = GAMMA,
                      gas_constant: float = GAS_CONSTANT, length: float = 1.0, rtol: float = 1e-12,
                      n_samples: int = 4001) -> ShockODESolution:
    """Steady 1D Navier-Stokes shock structure with constant viscosity.

    Upstream state is the nondimensional freestream; ``mu = rho u L / Re``.
    With mass flux ``m``, the momentum and energy integrals give

        (4/3) mu u' = m u + p - C1,     k T' = m (cp T + u^2/2) - (4/3) mu u u' - C2,

    integrated backwards in ``x`` from the downstream saddle along its
    stable eigenvector.  ``x = 0`` is where the density is the mean of
    the end states.
    """
    fs = Freestream(M, gamma, gas_constant)
    R = gas_constant
    cp = gamma * R / (gamma - 1)
    mu = fs.rho * fs.speed * length / Re
    k = mu * cp / Pr
    m = fs.rho * fs.speed
    u1, T1, p1 = fs.speed, fs.temperature, fs.pressure
    C1 = m * u1 + p1
    C2 = m * (cp * T1 + 0.5 * u1 ** 2)
    ns = normal_shock(M, gamma)
    u2, T2 = u1 * ns["u"], T1 * ns["T"]

    def rhs(x, z):
        u, T = z
        p = m * R * T / u
        du = (m * u + p - C1) / (4.0 / 3.0 * mu)
        dT = (m * (cp * T + 0.5 * u * u) - (4.0 / 3.0 * mu) * u * du - C2) / k
        return [du, dT]

    # linearisation at the downstream equilibrium
    eps = 1e-7
    z2 = np.array([u2, T2])
    Jd = np.column_stack([(np.array(rhs(0, z2 + eps * e)) - np.array(rhs(0, z2 - eps * e))) / (2 * eps)
                          for e in np.eye(2)])
    lam, vec = np.linalg.eig(Jd)
    i = int(np.argmin(lam.real))
    if lam.real[i] >= 0:
        raise RuntimeError("downstream equilibrium has no stable direction")
    v = vec[:, i].real
    if v[0] < 0:
        v = -v  # move towards larger velocity (upstream side)
    delta = 1e-9 * u2
    z0 = z2 + delta * v / abs(v[0])

    def reached_upstream(x, z):
        return z[0] - (u1 - 1e-9 * u1)

    reached_upstream.terminal = True
    x_span = (0.0, -2000.0 * mu / m)
    sol = solve_ivp(rhs, x_span, z0, method="LSODA", rtol=rtol, atol=1e-14, dense_output=True,
                    events=reached_upstream)
    if sol.status < 0:
        raise RuntimeError(f"shock ODE integration failed: {sol.message}")
    xe = sol.t[-1]
    xs = np.linspace(xe, 0.0, n_samples)
    u, T = sol.sol(xs)
    rho = m / u
    p = rho * R * T
    du, dT = rhs(0.0, (u, T))
    tau = 4.0 / 3.0 * mu * du
    q = -k * dT
    rho_mid = 0.5 * (fs.rho + fs.rho * ns["rho"])
    x0 = float(np.interp(rho_mid, rho, xs))
    upstream = {"rho": fs.rho, "v": u1, "T": T1, "p": p1}
    downstream = {"rho": fs.rho * ns["rho"], "v": u2, "T": T2, "p": p1 * ns["p"]}
    return ShockODESolution(xs - x0, rho, u, T, p, tau, q, upstream, downstream, mu, k)


# ---------------------------------------------------------------------------
# Finite-volume Burgers reference
# ---------------------------------------------------------------------------


def burgers_shock_formation_ic(t_shock: float = 0.5, y_inf: float = 0.2):
    def ic(x):
        return np.sin(2.0 * np.pi * np.asarray(x)) / (2.0 * np.pi * t_shock) + y_inf

    return ic


def _godunov_flux(ul, ur):
    """Exact Riemann flux for u^2/2 (convex), in its compact max/min form."""
    return np.maximum(0.5 * np.maximum(ul, 0.0) ** 2, 0.5 * np.minimum(ur, 0.0) ** 2)


def burgers_fv(ic, eps: float, T_final: float, n_cells: int, inflow: float = 0.2, cfl: float = 0.4):
    """First-order Godunov + central diffusion on [0, 1]; returns (x_centers, y)."""
    if n_cells < 2:
        raise ValueError("need at least two cells")
    dx = 1.0 / n_cells
    x = (np.arange(n_cells) + 0.5) * dx
    # cell averages of the initial condition (5-point Gauss)
    gp, gw = np.polynomial.legendre.leggauss(5)
    y = sum(w * ic(x + 0.5 * dx * g) for g, w in zip(gp, gw)) / 2.0
    t = 0.0
    while t < T_final - 1e-14:
        amax = max(float(np.abs(y).max()), abs(inflow), 1e-12)
        dt = cfl * dx / amax
        if eps > 0:
            dt = min(dt, cfl * dx * dx / (2 * eps))
        dt = min(dt, T_final - t)
        if amax * dt / dx > 1.0 + 1e-12 or (eps > 0 and 2 * eps * dt / dx ** 2 > 1.0 + 1e-12):
            raise ValueError("CFL violation")
        ext = np.concatenate([[2 * inflow - y[0]], y, [y[-1]]])
        F = _godunov_flux(ext[:-1], ext[1:])
        if eps > 0:
            F = F - eps * (ext[1:] - ext[:-1]) / dx
        y = y - dt / dx * (F[1:] - F[:-1])
        t += dt
    return x, y


def burgers_reference(ic=None, eps: float = 1e-3, T_final: float = 1.0, n_cells: int = 4096,
                      cache_dir: str | Path | None = None, richardson: bool = True):
    """Fine-grid Burgers profile at ``T_final``.

    Returns ``(x, y, info)`` where ``info["richardson"]`` is the L1 difference
    between the ``n`` and ``2n`` solutions (``nan`` when skipped).  With
    ``cache_dir`` the result is stored as CSV keyed by a hash of the inputs.
    """
    if n_cells < 4096:
        raise ValueError("reference needs n_cells >= 4096")
    default_ic = ic is None
    if default_ic:
        ic = burgers_shock_formation_ic()
    key = None
    if cache_dir is not None:
        probe = np.linspace(0, 1, 17)
        tag = f"{eps!r}|{T_final!r}|{n_cells}|{richardson}|" + ",".join(f"{v:.15e}" for v in ic(probe))
        key = hashlib.sha256(tag.encode()).hexdigest()[:16]
        path = Path(cache_dir) / f"burgers_ref_{key}.csv"
        if path.exists():
            return _read_profile(path)
    x, y = burgers_fv(ic, eps, T_final, n_cells)
    rich = float("nan")
    if richardson:
        x2, y2 = burgers_fv(ic, eps, T_final, 2 * n_cells)
        y2c = 0.5 * (y2[0::2] + y2[1::2])
        rich = float(np.mean(np.abs(y2c - y)))
    info = {"richardson": rich, "n_cells": n_cells}
    if key is not None:
        _write_profile(path, x, y, info)
    return x, y, info


def _write_profile(path: Path, x, y, info):
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["# richardson", repr(info["richardson"]), "n_cells", info["n_cells"]])
    w.writerow(["x", "y"])
    for a, b in zip(x, y):
        w.writerow([repr(float(a)), repr(float(b))])
    path.write_text(buf.getvalue())


def _read_profile(path: Path):
    rows = list(csv.reader(path.read_text().splitlines()))
    info = {"richardson": float(rows[0][1]), "n_cells": int(rows[0][3])}
    data = np.array([[float(a), float(b)] for a, b in rows[2:]])
    return data[:, 0], data[:, 1], info
