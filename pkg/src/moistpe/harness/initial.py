"""Initial conditions: seeded random smooth fields and named analytic profiles."""
from __future__ import annotations

import math

import numpy as np

from .. import operators as op
from ..geometry import Grid
from ..model import State, _assoc_legendre, analytic_profile
from ..operators import VectorField
from ..timestepper import EllipticWorkspace, StepConfig, barotropic_projection


def _smooth_scalar(rng, grid: Grid, l_max: int, k_max: int) -> np.ndarray:
    x = np.cos(grid.theta_centers)[:, None, None]
    phi = grid.phi_centers[None, :, None]
    out = np.zeros(grid.shape)
    for l in range(1, l_max + 1):
        for m in range(0, l + 1):
            horiz = _assoc_legendre(l, m, x)
            horiz = horiz / np.max(np.abs(horiz))
            for k in range(0, k_max + 1):
                vert = np.cos(k * math.pi * grid.xi_centers)[None, None, :]
                a, b = rng.standard_normal(2)
                out += horiz * (a * np.cos(m * phi) + b * np.sin(m * phi)) * vert / (l * (k + 1))
    return out


def _normalise(a: np.ndarray, amplitude: float) -> np.ndarray:
    peak = float(np.max(np.abs(a)))
    return a * (amplitude / peak) if peak > 0 else a


def smooth_velocity(psi: np.ndarray, chi: np.ndarray, grid: Grid) -> VectorField:
    """Rotational plus divergent velocity k x grad(psi) + grad(chi)."""
    gpsi = op.h_grad(psi, grid)
    gchi = op.h_grad(chi, grid)
    return VectorField(gchi.theta - gpsi.phi, gchi.phi + gpsi.theta)


def random_smooth_state(grid: Grid, seed: int, amplitude: float = 1.0, l_max: int = 3, k_max: int = 2) -> State:
    """A smooth state with peak |v|, |T|, |q| equal to ``amplitude``, projected onto the constraint."""
    rng = np.random.default_rng(seed)
    psi = _smooth_scalar(rng, grid, l_max, k_max)
    chi = _smooth_scalar(rng, grid, l_max, k_max)
    T = _smooth_scalar(rng, grid, l_max, k_max)
    q = _smooth_scalar(rng, grid, l_max, k_max)
    v = smooth_velocity(psi, 0.3 * chi, grid)
    v, _ = barotropic_projection(v, 1.0, EllipticWorkspace(grid), StepConfig(dt=1.0, projection_tol=1e-13))
    peak = float(np.max(v.magnitude()))
    if peak > 0:
        v = v * (amplitude / peak)
    return State(v, _normalise(T, amplitude), _normalise(q, amplitude), 0.0)


def baroclinic_perturbation(grid: Grid) -> VectorField:
    """Fixed smooth velocity shape with zero vertical mean (leaves the constraint intact)."""
    x = np.cos(grid.theta_centers)[:, None]
    phi = grid.phi_centers[None, :]
    psi = _assoc_legendre(2, 1, x) * np.cos(phi) + 0.5 * _assoc_legendre(3, 2, x) * np.sin(2 * phi)
    psi = np.repeat(psi[:, :, None], grid.n_xi, axis=2)
    v = smooth_velocity(psi, np.zeros(grid.shape), grid)
    vert = np.cos(math.pi * grid.xi_centers)[None, None, :]
    v = VectorField(v.theta * vert, v.phi * vert)
    return v * (1.0 / float(np.max(v.magnitude())))


def profile_state(table: dict, grid: Grid) -> State:
    """Rest velocity with T and q from named analytic profiles."""
    zero = VectorField.zeros(grid.shape)
    return State(zero, analytic_profile(table.get("T", {}), grid), analytic_profile(table.get("q", {}), grid), 0.0)
