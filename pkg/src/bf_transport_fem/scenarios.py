"""Built-in scenarios: the manufactured-solution validation case and the RO feed channel.

The manufactured sources are obtained by substituting the exact fields into the
momentum and transport equations (convective terms ``(grad u) u`` and ``u . grad phi``).
Boundary data keep the membrane coupling active. The wall velocity datum is shifted
by ``a1 * lambda * n`` and the multiplier equation receives the flux mismatch of the
exact solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forms import BoundaryData, ModelParams, Sources, membrane_boundary_data
from .mesh import BoundaryTag

PI = np.pi


@dataclass(frozen=True)
class ManufacturedSolution:
    """Closed-form validation fields on the unit square (inlet left, outlet right)."""

    params: ModelParams

    # ---- flow ---------------------------------------------------------------
    def u(self, x, t):
        X, Y = x[:, 0], x[:, 1]
        s = np.sin(t)
        return np.column_stack([-s * np.cos(PI * X) * np.sin(PI * Y), s * np.sin(PI * X) * np.cos(PI * Y)])

    def du_dt(self, x, t):
        X, Y = x[:, 0], x[:, 1]
        c = np.cos(t)
        return np.column_stack([-c * np.cos(PI * X) * np.sin(PI * Y), c * np.sin(PI * X) * np.cos(PI * Y)])

    def grad_u(self, x, t):
        """(n, 2, 2) with entry [i, j] = d u_i / d x_j."""
        X, Y = x[:, 0], x[:, 1]
        s = np.sin(t)
        g = np.empty((len(x), 2, 2))
        g[:, 0, 0] = s * PI * np.sin(PI * X) * np.sin(PI * Y)
        g[:, 0, 1] = -s * PI * np.cos(PI * X) * np.cos(PI * Y)
        g[:, 1, 0] = s * PI * np.cos(PI * X) * np.cos(PI * Y)
        g[:, 1, 1] = -s * PI * np.sin(PI * X) * np.sin(PI * Y)
        return g

    def laplace_u(self, x, t):
        return -2.0 * PI**2 * self.u(x, t)

    def p(self, x, t):
        return np.sin(t) * (x[:, 0] - 1.0) * np.exp(x[:, 1])

    def grad_p(self, x, t):
        e = np.exp(x[:, 1])
        return np.sin(t) * np.column_stack([e, (x[:, 0] - 1.0) * e])

    def sigma(self, x, t):
        s = self.params.nu * self.grad_u(x, t)
        s[:, 0, 0] -= self.p(x, t)
        s[:, 1, 1] -= self.p(x, t)
        return s

    def div_sigma(self, x, t):
        return self.params.nu * self.laplace_u(x, t) - self.grad_p(x, t)

    # ---- transport ------------------------------------------------------------
    def phi(self, x, t):
        return np.exp(-t) * np.sin(x[:, 0]) * np.sin(x[:, 1])

    def grad_phi(self, x, t):
        X, Y = x[:, 0], x[:, 1]
        return np.exp(-t) * np.column_stack([np.cos(X) * np.sin(Y), np.sin(X) * np.cos(Y)])

    def rho(self, x, t):
        return self.params.kappa * self.grad_phi(x, t)

    def div_rho(self, x, t):
        return -2.0 * self.params.kappa * self.phi(x, t)

    def lam(self, x, t):
        return -self.phi(x, t)

    # ---- data ---------------------------------------------------------------
    def momentum_source(self, x, t):
        p = self.params
        u = self.u(x, t)
        conv = np.einsum("nij,nj->ni", self.grad_u(x, t), u)
        speed = np.hypot(u[:, 0], u[:, 1])
        drag = p.forch * speed[:, None] ** (p.power - 2.0) * u
        return self.du_dt(x, t) - self.div_sigma(x, t) + conv + drag

    def transport_source(self, x, t):
        u = self.u(x, t)
        dphi = -self.phi(x, t)
        conv = np.einsum("ni,ni->n", self.grad_phi(x, t), u)
        return dphi - self.div_rho(x, t) + conv

    def velocity_datum(self, x, t, normal, tag):
        u = self.u(x, t)
        if tag is BoundaryTag.WALL:
            return u - self.params.a1 * self.lam(x, t)[:, None] * normal
        return u

    def boundary_flux(self, x, t, normal, tag):
        p = self.params
        out = -np.einsum("ni,ni->n", self.rho(x, t), normal)
        if tag is BoundaryTag.WALL:
            lam = self.lam(x, t)
            out = out + p.a2 * lam + p.a1 * lam**2 + p.atilde0
        return out

    def outlet_traction(self, x, t, normal):
        return np.einsum("nij,nj->ni", self.sigma(x, t), normal)

    def boundary_data(self) -> BoundaryData:
        return BoundaryData(
            g=self.velocity_datum,
            u0=lambda x: self.u(x, 0.0),
            phi0=lambda x: self.phi(x, 0.0),
        )

    def sources(self) -> Sources:
        return Sources(
            momentum=self.momentum_source,
            transport=self.transport_source,
            boundary_flux=self.boundary_flux,
            outlet_traction=self.outlet_traction,
        )


VALIDATION_SIDES = {
    "left": BoundaryTag.INLET,
    "right": BoundaryTag.OUTLET,
    "bottom": BoundaryTag.WALL,
    "top": BoundaryTag.WALL,
}


def validation_params(dt: float, t_final: float = 0.5, **overrides) -> ModelParams:
    """Validation-case constants; the Forchheimer coefficient and inlet concentration are not
    fixed by the validation case and default to 1 and 0."""
    kw = dict(nu=0.1, kappa=0.1, forch=1.0, power=3.0, a0=0.5, a1=2.0, phi_in=0.0, dt=dt, t_final=t_final)
    kw.update(overrides)
    return ModelParams.derived(**kw)


# ---- reverse-osmosis feed channel --------------------------------------------------

CHANNEL_HEIGHT = 0.7221
CHANNEL_LENGTH = 8.6652


def channel_params(dt: float = 1e-2, t_final: float = 0.2, **overrides) -> ModelParams:
    kw = dict(
        nu=0.8, forch=3.0, kappa=1e-3, power=3.0, a0=2e-2, a1=1.8e4, phi_in=6e-10,
        dt=dt, t_final=t_final,
    )
    kw.update(overrides)
    return ModelParams.derived(**kw)


def channel_inlet(params: ModelParams, height: float = CHANNEL_HEIGHT, peak: float = 10.0):
    """Parabolic feed profile with the transverse permeate-compatible component."""

    def u_in(x, t):
        s = x[:, 1] / height
        return np.column_stack(
            [peak * (4.0 * s - 4.0 * s**2), (params.a0 - params.a1 * params.phi_in) * (2.0 * s - 1.0)]
        )

    return u_in


def channel_data(params: ModelParams, height: float = CHANNEL_HEIGHT, peak: float = 10.0) -> BoundaryData:
    """Membrane boundary data; the flow starts from the streamwise feed profile."""
    u_in = channel_inlet(params, height, peak)

    def u0(x):
        v = u_in(x, 0.0)
        v[:, 1] = 0.0
        return v

    return membrane_boundary_data(params, u_in, u0=u0)
