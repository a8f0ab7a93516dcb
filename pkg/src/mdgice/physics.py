"""Flux models, equation of state and constitutive operators.

Array conventions (leading axes ``...`` are broadcast over quadrature points):

* state ``y``: (..., m)
* auxiliary ``sigma`` and spatial gradients ``g``: (..., m, dx)
* total flux: (..., m, d) with ``d = dx + 1`` for space-time models, the
  last column being the state itself.

Every routine is written with plain arithmetic so that it accepts complex
input; derivatives of derivatives are taken by complex-step differentiation
in :mod:`mdgice.assembly`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAMMA = 1.4
GAS_CONSTANT = 287.0
PRANDTL = 0.72

GRADIENT = "gradient"
FLUX = "flux"
SCALED_FLUX = "scaled_flux"
CONSTITUTIVE_CHOICES = (GRADIENT, FLUX, SCALED_FLUX)


class AdmissibilityError(ValueError):
    """A state left the admissible set (e.g. negative density or pressure)."""

    def __init__(self, quantity: str, value: float):
        super().__init__(f"inadmissible state: {quantity} = {value:.6g}")
        self.quantity = quantity
        self.value = value


def complex_step(fn, x: np.ndarray, h: float = 1e-30) -> np.ndarray:
    """Jacobian of ``fn`` at ``x`` along the last axis of ``x``.

    Result has shape ``fn(x).shape + (x.shape[-1],)``.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    cols = []
    for a in range(n):
        xc = x.astype(complex)
        xc[..., a] += 1j * h
        cols.append(np.imag(fn(xc)) / h)
    return np.stack(cols, axis=-1)


class FluxModel:
    """Common interface; subclasses supply convective and viscous parts."""

    m: int
    dx: int
    spacetime: bool = False

    @property
    def d(self) -> int:
        return self.dx + (1 if self.spacetime else 0)

    # -- hooks ---------------------------------------------------------------
    def check(self, y: np.ndarray) -> None:
        """Raise :class:`AdmissibilityError` if ``y`` is inadmissible."""

    def convective(self, y):
        raise NotImplementedError

    def convective_dy(self, y):
        raise NotImplementedError

    def constitutive(self, y, g):
        raise NotImplementedError

    def constitutive_dy(self, y, g):
        """d(G(y) g)/dy, shape (..., m, dx, m)."""
        raise NotImplementedError

    def viscous(self, y, sigma):
        raise NotImplementedError

    def viscous_dy(self, y, sigma):
        raise NotImplementedError

    def viscous_ds(self, y, sigma):
        raise NotImplementedError

    def primal_viscous(self, y, g):
        """Viscous flux F^v(y, grad y) evaluated directly, without sigma."""
        raise NotImplementedError

    # -- derived -------------------------------------------------------------
    def constitutive_tensor(self, y):
        """G(y) as an array (..., m, dx, m, dx) with (G g)_{ci} = G_{ciaj} g_{aj}."""
        y = np.asarray(y)
        lead = y.shape[:-1]
        eye = np.eye(self.m * self.dx).reshape(self.m * self.dx, self.m, self.dx)
        cols = [self.constitutive(y, np.broadcast_to(e, lead + e.shape)) for e in eye]
        return np.stack(cols, axis=-1).reshape(lead + (self.m, self.dx, self.m, self.dx))

    def flux(self, y, sigma):
        y = np.asarray(y)
        F = self.convective(y) - self.viscous(y, sigma)
        if self.spacetime:
            F = np.concatenate([F, y[..., :, None]], axis=-1)
        return F

    def flux_dy(self, y, sigma):
        """dF_{ci}/dy_a, shape (..., m, d, m)."""
        y = np.asarray(y)
        D = self.convective_dy(y) - self.viscous_dy(y, sigma)
        if self.spacetime:
            eye = np.broadcast_to(np.eye(self.m, dtype=D.dtype), y.shape[:-1] + (self.m, self.m))
            D = np.concatenate([D, eye[..., :, None, :]], axis=-2)
        return D

    def flux_ds(self, y, sigma):
        """dF_{ci}/dsigma_{aj}, shape (..., m, d, m, dx)."""
        D = -self.viscous_ds(y, sigma)
        if self.spacetime:
            pad = np.zeros(D.shape[:-4] + (self.m, 1, self.m, self.dx), dtype=D.dtype)
            D = np.concatenate([D, pad], axis=-3)
        return D

    def flux_no_viscous(self, y):
        """Total flux with sigma = 0 (convective plus temporal column)."""
        y = np.asarray(y)
        F = self.convective(y)
        if self.spacetime:
            F = np.concatenate([F, y[..., :, None]], axis=-1)
        return F

    def flux_no_viscous_dy(self, y):
        y = np.asarray(y)
        D = self.convective_dy(y)
        if self.spacetime:
            eye = np.broadcast_to(np.eye(self.m, dtype=D.dtype), y.shape[:-1] + (self.m, self.m))
            D = np.concatenate([D, eye[..., :, None, :]], axis=-2)
        return D


def _scalar_coefficients(choice: str, eps: float):
    """(c_G, c_F) with G = c_G I and viscous flux = c_F sigma, c_G c_F = eps."""
    if choice == GRADIENT:
        return 1.0, eps
    if choice == FLUX:
        return eps, 1.0
    if choice == SCALED_FLUX:
        r = float(np.sqrt(eps))
        return r, r
    raise ValueError(f"unknown constitutive choice {choice!r}")


class _ScalarModel(FluxModel):
    m = 1

    def __init__(self, eps: float, constitutive_choice: str, dx: int, spacetime: bool):
        if eps < 0:
            raise ValueError("diffusivity must be non-negative")
        self.eps = float(eps)
        self.dx = dx
        self.spacetime = spacetime
        self.constitutive_choice = constitutive_choice
        self.c_G, self.c_F = _scalar_coefficients(constitutive_choice, self.eps)

    def constitutive(self, y, g):
        return self.c_G * np.asarray(g)

    def constitutive_dy(self, y, g):
        g = np.asarray(g)
        return np.zeros(g.shape + (1,), dtype=np.result_type(g, y))

    def viscous(self, y, sigma):
        return self.c_F * np.asarray(sigma)

    def viscous_dy(self, y, sigma):
        sigma = np.asarray(sigma)
        return np.zeros(sigma.shape + (1,), dtype=np.result_type(sigma, y))

    def viscous_ds(self, y, sigma):
        y = np.asarray(y)
        T = self.c_F * np.eye(self.dx).reshape(1, self.dx, 1, self.dx)
        return np.broadcast_to(T, y.shape[:-1] + T.shape).astype(np.result_type(y, float))

    def primal_viscous(self, y, g):
        return self.eps * np.asarray(g)


class AdvectionDiffusion(_ScalarModel):
    """Linear advection-diffusion: F = v y - eps grad y."""

    def __init__(self, velocity, eps: float, constitutive_choice: str = SCALED_FLUX,
                 spacetime: bool = False):
        self.velocity = np.atleast_1d(np.asarray(velocity, dtype=float))
        super().__init__(eps, constitutive_choice, len(self.velocity), spacetime)

    def convective(self, y):
        y = np.asarray(y)
        return y[..., :, None] * self.velocity

    def convective_dy(self, y):
        y = np.asarray(y)
        out = np.zeros(y.shape[:-1] + (1, self.dx, 1), dtype=np.result_type(y, float))
        out[..., 0, :, 0] = self.velocity
        return out


class Burgers(_ScalarModel):
    """Viscous Burgers: F = y^2/2 beta - eps grad y, with beta = (1, ..., 1) by default."""

    def __init__(self, eps: float, constitutive_choice: str = SCALED_FLUX, dx: int = 1,
                 spacetime: bool = False, direction=None):
        super().__init__(eps, constitutive_choice, dx, spacetime)
        self.direction = np.ones(dx) if direction is None else np.asarray(direction, dtype=float)

    def convective(self, y):
        y = np.asarray(y)
        return 0.5 * (y * y)[..., :, None] * self.direction

    def convective_dy(self, y):
        y = np.asarray(y)
        return (y[..., :, None] * self.direction)[..., None]


@dataclass(frozen=True)
class GasProperties:
    gamma: float = GAMMA
    gas_constant: float = GAS_CONSTANT
    prandtl: float = PRANDTL

    @property
    def cp(self) -> float:
        return self.gamma * self.gas_constant / (self.gamma - 1.0)

    @property
    def cv(self) -> float:
        return self.gas_constant / (self.gamma - 1.0)


class NavierStokes(FluxModel):
    """Compressible Navier-Stokes for a calorically perfect gas with constant viscosity.

    Parameters
    ----------
    dx : spatial dimension (1 or 2 in practice; any dx works).
    mu : dynamic viscosity.
    mu_ref : freestream viscosity used to scale the auxiliary variable;
        defaults to ``mu``.
    k : thermal conductivity; defaults to ``mu cp / Pr``.
    """

    def __init__(self, dx: int, mu: float, mu_ref: float | None = None, k: float | None = None,
                 gas: GasProperties = GasProperties(), spacetime: bool = False):
        if mu <= 0:
            raise ValueError("viscosity must be positive")
        self.dx = dx
        self.m = dx + 2
        self.spacetime = spacetime
        self.gas = gas
        self.gamma = gas.gamma
        self.R = gas.gas_constant
        self.mu = float(mu)
        self.mu_ref = float(mu if mu_ref is None else mu_ref)
        self.k = float(mu * gas.cp / gas.prandtl if k is None else k)
        self._s = self.mu_ref ** 0.5

    # -- equation of state ---------------------------------------------------
    def check(self, y):
        y = np.real(np.asarray(y))
        rho = y[..., 0]
        if np.any(~np.isfinite(y)):
            raise AdmissibilityError("non-finite state", float("nan"))
        if np.any(rho <= 0):
            raise AdmissibilityError("density", float(rho.min()))
        p = self.pressure(y)
        if np.any(p <= 0):
            raise AdmissibilityError("pressure", float(p.min()))

    def velocity(self, y):
        return y[..., 1:1 + self.dx] / y[..., :1]

    def pressure(self, y):
        v = self.velocity(y)
        return (self.gamma - 1.0) * (y[..., -1] - 0.5 * y[..., 0] * np.sum(v * v, axis=-1))

    def temperature(self, y):
        return self.pressure(y) / (self.R * y[..., 0])

    def eos(self, y):
        """(p, T, H, c) for admissible ``y``."""
        y = np.asarray(y)
        self.check(y)
        p = self.pressure(y)
        rho = y[..., 0]
        return p, p / (self.R * rho), (y[..., -1] + p) / rho, np.sqrt(self.gamma * p / rho)

    def pressure_dy(self, y):
        v = self.velocity(y)
        g1 = self.gamma - 1.0
        return np.concatenate([(0.5 * g1 * np.sum(v * v, axis=-1))[..., None], -g1 * v,
                               np.full(y.shape[:-1] + (1,), g1, dtype=v.dtype)], axis=-1)

    def state_from_primitive(self, rho, v, p):
        # keep complex input intact so boundary data can be differentiated by complex step
        rho = np.asarray(rho) + 0.0
        v = np.asarray(v) + 0.0
        E = np.asarray(p) / (self.gamma - 1.0) + 0.5 * rho * np.sum(v * v, axis=-1)
        return np.concatenate([rho[..., None], rho[..., None] * v, E[..., None]], axis=-1)

    # -- convective ----------------------------------------------------------
    def convective(self, y):
        y = np.asarray(y)
        dx = self.dx
        v = self.velocity(y)
        p = self.pressure(y)
        F = np.empty(y.shape[:-1] + (self.m, dx), dtype=np.result_type(y, float))
        F[..., 0, :] = y[..., 1:1 + dx]
        F[..., 1:1 + dx, :] = y[..., 1:1 + dx, None] * v[..., None, :]
        for i in range(dx):
            F[..., 1 + i, i] += p
        F[..., -1, :] = (y[..., -1] + p)[..., None] * v
        return F

    def convective_dy(self, y):
        y = np.asarray(y)
        dx, m = self.dx, self.m
        rho = y[..., 0]
        v = self.velocity(y)
        p = self.pressure(y)
        H = (y[..., -1] + p) / rho
        pd = self.pressure_dy(y)
        D = np.zeros(y.shape[:-1] + (m, dx, m), dtype=np.result_type(y, float))
        eye = np.eye(dx)
        for i in range(dx):
            D[..., 0, i, 1 + i] = 1.0
            for j in range(dx):
                D[..., 1 + j, i, 0] = -v[..., j] * v[..., i] + pd[..., 0] * eye[i, j]
                for k in range(dx):
                    D[..., 1 + j, i, 1 + k] = (eye[j, k] * v[..., i] + v[..., j] * eye[i, k]
                                               + pd[..., 1 + k] * eye[i, j])
                D[..., 1 + j, i, -1] = pd[..., -1] * eye[i, j]
            D[..., -1, i, 0] = v[..., i] * (pd[..., 0] - H)
            for k in range(dx):
                D[..., -1, i, 1 + k] = pd[..., 1 + k] * v[..., i] + H * eye[i, k]
            D[..., -1, i, -1] = (1.0 + pd[..., -1]) * v[..., i]
        return D

    # -- viscous -------------------------------------------------------------
    def _gradients(self, y, g):
        """Velocity gradient dv[j, i] and temperature gradient dT[i] from grad y."""
        dx = self.dx
        rho = y[..., 0]
        v = self.velocity(y)
        T = self.temperature(y)
        g0 = g[..., 0, :]
        dv = (g[..., 1:1 + dx, :] - v[..., :, None] * g0[..., None, :]) / rho[..., None, None]
        dp = (self.gamma - 1.0) * (g[..., -1, :] - np.einsum("...j,...ji->...i", v, g[..., 1:1 + dx, :])
                                   + 0.5 * np.sum(v * v, axis=-1)[..., None] * g0)
        dT = (dp - self.R * T[..., None] * g0) / (self.R * rho[..., None])
        return dv, dT

    def _stress(self, dv):
        div = np.trace(dv, axis1=-2, axis2=-1)
        tau = self.mu * (dv + np.swapaxes(dv, -1, -2))
        return tau - (2.0 / 3.0) * self.mu * div[..., None, None] * np.eye(self.dx)

    def constitutive(self, y, g):
        y = np.asarray(y)
        g = np.asarray(g)
        dv, dT = self._gradients(y, g)
        tau = self._stress(dv)
        out = np.zeros(np.broadcast_shapes(y.shape[:-1], g.shape[:-2]) + (self.m, self.dx),
                       dtype=np.result_type(y, g, float))
        out[..., 1:1 + self.dx, :] = tau
        out[..., -1, :] = self.k * dT
        return out / self._s

    def constitutive_dy(self, y, g):
        g = np.asarray(g)
        return complex_step(lambda yc: self.constitutive(yc, g), np.asarray(y, dtype=float))

    def viscous(self, y, sigma):
        y = np.asarray(y)
        sigma = np.asarray(sigma)
        v = self.velocity(y)
        F = self._s * sigma.astype(np.result_type(y, sigma, float))
        F[..., 0, :] = 0.0
        F[..., -1, :] = self._s * (np.einsum("...ji,...j->...i", sigma[..., 1:1 + self.dx, :], v)
                                   + sigma[..., -1, :])
        return F

    def viscous_dy(self, y, sigma):
        y = np.asarray(y)
        sigma = np.asarray(sigma)
        dx = self.dx
        rho = y[..., 0]
        v = self.velocity(y)
        D = np.zeros(np.broadcast_shapes(y.shape[:-1], sigma.shape[:-2]) + (self.m, dx, self.m),
                     dtype=np.result_type(y, sigma, float))
        st = sigma[..., 1:1 + dx, :]  # (..., j, i)
        # d v_j / d rho = -v_j / rho, d v_j / d m_k = delta_jk / rho
        D[..., -1, :, 0] = -self._s * np.einsum("...ji,...j->...i", st, v) / rho[..., None]
        D[..., -1, :, 1:1 + dx] = self._s * np.swapaxes(st, -1, -2) / rho[..., None, None]
        return D

    def viscous_ds(self, y, sigma):
        y = np.asarray(y)
        dx, m = self.dx, self.m
        v = self.velocity(y)
        D = np.zeros(y.shape[:-1] + (m, dx, m, dx), dtype=np.result_type(y, float))
        for c in range(1, m):
            for i in range(dx):
                D[..., c, i, c, i] = self._s
        for j in range(dx):
            for i in range(dx):
                D[..., -1, i, 1 + j, i] = self._s * v[..., j]
        return D

    def primal_viscous(self, y, g):
        """(0, tau_{.i}, tau_{ji} v_j - q_i) built from primitive gradients."""
        y = np.asarray(y, dtype=float)
        g = np.asarray(g, dtype=float)
        dx = self.dx
        rho = y[..., 0]
        u = y[..., 1:1 + dx] / rho[..., None]
        # grad of primitive variables by the quotient rule
        grad_u = (g[..., 1:1 + dx, :] * rho[..., None, None]
                  - y[..., 1:1 + dx, None] * g[..., 0:1, :]) / rho[..., None, None] ** 2
        e = y[..., -1] / rho - 0.5 * np.sum(u * u, axis=-1)
        grad_e = ((g[..., -1, :] * rho[..., None] - y[..., -1:] * g[..., 0, :]) / rho[..., None] ** 2
                  - np.einsum("...j,...ji->...i", u, grad_u))
        grad_T = grad_e * (self.gamma - 1.0) / self.R
        del e
        div = sum(grad_u[..., i, i] for i in range(dx))
        tau = np.empty(grad_u.shape)
        for j in range(dx):
            for i in range(dx):
                tau[..., j, i] = self.mu * (grad_u[..., j, i] + grad_u[..., i, j]
                                            - (2.0 / 3.0) * div * (i == j))
        F = np.zeros(y.shape[:-1] + (self.m, dx))
        F[..., 1:1 + dx, :] = tau
        F[..., -1, :] = np.einsum("...ji,...j->...i", tau, u) + self.k * grad_T
        return F


# ---------------------------------------------------------------------------
# Functional front end
# ---------------------------------------------------------------------------


def convective_flux(model: FluxModel, y):
    model.check(y)
    return model.convective(np.asarray(y, dtype=float))


def eos_eval(y, model: NavierStokes | None = None):
    """(p, T, H, c) for a Navier-Stokes state ``y`` (default gas, dx from ``y``)."""
    y = np.asarray(y, dtype=float)
    if model is None:
        model = NavierStokes(y.shape[-1] - 2, mu=1.0)
    return model.eos(y)


def constitutive_apply(model: FluxModel, y, grad_y):
    model.check(y)
    return model.constitutive(np.asarray(y, dtype=float), np.asarray(grad_y, dtype=float))


def viscous_flux_from_aux(model: FluxModel, y, sigma):
    model.check(y)
    return model.viscous(np.asarray(y, dtype=float), np.asarray(sigma, dtype=float))


def total_flux(model: FluxModel, y, sigma):
    model.check(y)
    return model.flux(np.asarray(y, dtype=float), np.asarray(sigma, dtype=float))


def flux_derivatives(model: FluxModel, y, sigma):
    """(dF/dy, dF/dsigma, d(G(y) sigma)/dy) at an admissible state.

    The third entry contracts the state derivative of the constitutive
    tensor with ``sigma`` interpreted as a spatial gradient.
    """
    model.check(y)
    y = np.asarray(y, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    return model.flux_dy(y, sigma), model.flux_ds(y, sigma), model.constitutive_dy(y, sigma)
