"""Prognostic state, forcing catalogue and explicit tendencies."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre

from . import operators as op
from .errors import UnknownBC, ValidationError
from .geometry import Grid, Params, coriolis, integrate_sphere
from .operators import VectorField


@dataclass(frozen=True, eq=False)
class State:
    v: VectorField
    T: np.ndarray
    q: np.ndarray
    t: float = 0.0
    # surface geopotential returned by the most recent projection
    phi_s: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def zeros(cls, grid: Grid, t: float = 0.0) -> "State":
        return cls(VectorField.zeros(grid.shape), np.zeros(grid.shape), np.zeros(grid.shape), t)

    def surface_geopotential(self, grid: Grid) -> np.ndarray:
        if self.phi_s is None:
            return np.zeros(grid.horizontal_shape)
        return self.phi_s

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.v.theta))
            and np.all(np.isfinite(self.v.phi))
            and np.all(np.isfinite(self.T))
            and np.all(np.isfinite(self.q))
        )


@dataclass(frozen=True, eq=False)
class Diagnosed:
    W: np.ndarray
    Phi: np.ndarray
    Phi_s: np.ndarray


@dataclass(frozen=True, eq=False)
class Forcing:
    Q1: np.ndarray
    Q2: np.ndarray

    @classmethod
    def zeros(cls, grid: Grid) -> "Forcing":
        return cls(np.zeros(grid.shape), np.zeros(grid.shape))


# ---------------------------------------------------------------------------
# analytic profile catalogue (shared by forcing and initial conditions)

PROFILES = ("zero", "constant", "zonal_band", "harmonic")


def _vertical_shape(grid: Grid, mode: int) -> np.ndarray:
    return np.cos(mode * math.pi * grid.xi_centers)


def _assoc_legendre(l: int, m: int, x: np.ndarray) -> np.ndarray:
    poly = legendre.Legendre.basis(l).deriv(m)
    return (-1) ** m * (1.0 - x**2) ** (m / 2.0) * poly(x)


def analytic_profile(table: dict, grid: Grid) -> np.ndarray:
    """Evaluate a named profile on cell centres.

    ``zonal_band``: amplitude * exp(-((theta - center) / width)^2);
    ``harmonic``: amplitude * P_l^m(cos theta) cos(m phi), normalised to unit
    maximum.  Both are multiplied by cos(vertical_mode * pi * xi).
    """
    name = table.get("profile", "zero")
    amplitude = float(table.get("amplitude", 0.0))
    theta = grid.theta_centers[:, None, None]
    phi = grid.phi_centers[None, :, None]
    vertical = _vertical_shape(grid, int(table.get("vertical_mode", 0)))[None, None, :]
    if name == "zero":
        return np.zeros(grid.shape)
    if name == "constant":
        return np.full(grid.shape, amplitude)
    if name == "zonal_band":
        center = float(table.get("center", math.pi / 2))
        width = float(table.get("width", 0.4))
        horiz = np.exp(-(((theta - center) / width) ** 2)) + 0.0 * phi
        return amplitude * horiz * vertical
    if name == "harmonic":
        l, m = int(table.get("l", 2)), int(table.get("m", 1))
        if not 0 <= m <= l:
            raise ValidationError("m", f"harmonic needs 0 <= m <= l, got l={l}, m={m}")
        horiz = _assoc_legendre(l, m, np.cos(theta)) * np.cos(m * phi)
        peak = np.max(np.abs(horiz))
        return amplitude * horiz / (peak if peak > 0 else 1.0) * vertical
    raise ValidationError("profile", f"unknown profile {name!r}")


def make_forcing(q1_table: dict, q2_table: dict, grid: Grid) -> Forcing:
    return Forcing(analytic_profile(q1_table, grid), analytic_profile(q2_table, grid))


# ---------------------------------------------------------------------------
# boundary conditions


def boundary_condition(kind: str, params: Params) -> op.BoundaryCondition:
    if kind == "velocity":
        return op.NEUMANN
    if kind == "temperature":
        return op.robin(params.alpha_s)
    if kind == "moisture":
        return op.robin(params.beta_s)
    raise UnknownBC(f"unknown field kind {kind!r}")


def apply_boundary(field_, kind: str, params: Params, grid: Grid):
    """Ghost-augmented copy of a field (n_xi + 2 levels)."""
    bc = boundary_condition(kind, params)
    if isinstance(field_, VectorField):
        if kind != "velocity":
            raise UnknownBC("vector fields take the velocity condition")
        return VectorField(op.ghost_extend(field_.theta, bc, grid), op.ghost_extend(field_.phi, bc, grid))
    return op.ghost_extend(field_, bc, grid)


# ---------------------------------------------------------------------------
# diagnosis and tendencies


def diagnose(state: State, params: Params, grid: Grid) -> Diagnosed:
    W = op.vertical_velocity(state.v, grid)
    phi_s = state.surface_geopotential(grid)
    phi_s = phi_s - integrate_sphere(phi_s, grid) / (4.0 * math.pi)
    Phi = op.hydrostatic_phi(state.T, state.q, phi_s, params, grid)
    return Diagnosed(W=W, Phi=Phi, Phi_s=phi_s)


def coriolis_force(v: VectorField, params: Params, grid: Grid) -> VectorField:
    """(f/R0) k x v with k x e_theta = e_phi, k x e_phi = -e_theta."""
    f = coriolis(grid.theta_centers)[:, None, None] / params.r0
    return VectorField(-f * v.phi, f * v.theta)


def momentum_terms(state: State, diag: Diagnosed, params: Params, grid: Grid, tol: float = 1e-10) -> dict:
    """Each term of the momentum balance, with the sign it has on the left-hand side."""
    phi_s = np.broadcast_to(diag.Phi_s[..., None], grid.shape)
    return {
        "advection": op.full_advect(state.v, state.v, grid, W=diag.W, tol=tol),
        "coriolis": coriolis_force(state.v, params, grid),
        "surface_pressure": op.h_grad(np.ascontiguousarray(phi_s), grid),
        "pressure_gradient": op.pressure_gradient_force(state.T, state.q, params, grid),
    }


def rhs_momentum(
    state: State,
    diag: Diagnosed,
    params: Params,
    grid: Grid,
    include_coriolis: bool = True,
    tol: float = 1e-10,
) -> VectorField:
    """Explicit momentum tendency (viscous terms are left to the time stepper)."""
    terms = momentum_terms(state, diag, params, grid, tol=tol)
    if not include_coriolis:
        del terms["coriolis"]
    total = terms.pop("advection")
    for term in terms.values():
        total = total + term
    return -total


def rhs_temperature(
    state: State, diag: Diagnosed, forcing: Forcing, params: Params, grid: Grid, tol: float = 1e-10
) -> np.ndarray:
    adv = op.full_advect(state.v, state.T, grid, W=diag.W, tol=tol)
    return -adv + op.buoyancy(state.q, diag.W, params, grid) + forcing.Q1


def rhs_moisture(
    state: State, diag: Diagnosed, forcing: Forcing, params: Params, grid: Grid, tol: float = 1e-10
) -> np.ndarray:
    return -op.full_advect(state.v, state.q, grid, W=diag.W, tol=tol) + forcing.Q2
