"""First-order IMEX time stepping with a barotropic pressure projection.

One step is: explicit tendencies (advection, buoyancy, pressure gradient and,
by default, horizontal diffusion), an exact Coriolis rotation, backward-Euler
vertical diffusion by column tridiagonal solves, optional Crank-Nicolson
horizontal diffusion, and finally a projection that removes the vertically
integrated divergence by solving a Poisson problem for the surface
geopotential.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _pykernels, kernels
from . import operators as op
from .errors import CflViolation, EllipticDivergence, NonFinite, OutOfRange, SingularSystem
from .geometry import Grid, Params, coriolis, polar_filter
from .model import Diagnosed, Forcing, State, boundary_condition, rhs_momentum, rhs_moisture, rhs_temperature
from .operators import VectorField

DIFFUSION_MODES = ("explicit", "cn")


@dataclass(frozen=True)
class StepConfig:
    dt: float
    diffusion_mode: str = "explicit"
    projection_tol: float = 1e-10
    max_cg_iters: int = 200
    cfl_safety: float = 0.9
    check_cfl: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise OutOfRange(f"step.dt must be finite and > 0, got {self.dt!r}")
        if self.diffusion_mode not in DIFFUSION_MODES:
            raise OutOfRange(f"step.diffusion_mode must be one of {DIFFUSION_MODES}, got {self.diffusion_mode!r}")
        if not self.projection_tol > 0:
            raise OutOfRange(f"step.projection_tol must be > 0, got {self.projection_tol!r}")
        if not (isinstance(self.max_cg_iters, int) and self.max_cg_iters >= 1):
            raise OutOfRange(f"step.max_cg_iters must be a positive integer, got {self.max_cg_iters!r}")
        if not 0 < self.cfl_safety <= 1:
            raise OutOfRange(f"step.cfl_safety must lie in (0, 1], got {self.cfl_safety!r}")


# ---------------------------------------------------------------------------
# zonal-spectral decomposition of the scalar Laplacian


def _meridional_laplacian(grid: Grid) -> np.ndarray:
    """Dense n_theta x n_theta matrix of the colatitude part of laplace_scalar."""
    n = grid.n_theta
    face_sin = np.ascontiguousarray(grid.face_sin)
    half_inv_area = 0.5 / np.asarray(grid.area)
    zonal = np.zeros(n)
    basis = np.eye(n).reshape(n, 1, n)
    gt, _ = _pykernels.h_grad(basis, face_sin, half_inv_area, zonal)
    lap = _pykernels.h_div(gt, np.zeros_like(gt), face_sin, half_inv_area, zonal)
    return lap[:, 0, :]


class ZonalSpectrum:
    """Eigen-decomposition of -laplace_scalar, one symmetric block per zonal wavenumber.

    The Laplacian has row-dependent coefficients and a circulant longitude
    stencil, so it is block diagonal after a real FFT along longitude.  Block
    ``m`` is symmetrised with the square roots of the row areas and
    diagonalised once; any spectral function of the Laplacian is then applied
    exactly with two FFTs and a batched matrix product.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        n_modes = grid.n_phi // 2 + 1
        zonal = grid.d_theta / (np.asarray(grid.area) * 2.0 * grid.d_phi)
        lap_theta = _meridional_laplacian(grid)
        root = np.sqrt(np.asarray(grid.area))
        self.root = root
        sym = -(root[:, None] * lap_theta / root[None, :])
        sym = 0.5 * (sym + sym.T)
        m = np.arange(n_modes)
        zonal_eig = 4.0 * np.sin(m * grid.d_phi) ** 2
        self.eigvals = np.empty((n_modes, grid.n_theta))
        self.eigvecs = np.empty((n_modes, grid.n_theta, grid.n_theta))
        for k in range(n_modes):
            block = sym + np.diag(zonal_eig[k] * zonal**2)
            lam, vec = np.linalg.eigh(block)
            self.eigvals[k] = lam
            self.eigvecs[k] = vec
        self.scale = float(np.max(self.eigvals))
        self._cache = {}

    def operator(self, key, fn) -> np.ndarray:
        """Per-wavenumber matrices of fn(-laplace_scalar), cached by ``key``."""
        mats = self._cache.get(key)
        if mats is None:
            mult = fn(self.eigvals)
            sym = np.einsum("kij,kj,klj->kil", self.eigvecs, mult, self.eigvecs)
            mats = sym / self.root[None, :, None] * self.root[None, None, :]
            self._cache[key] = mats
        return mats

    def apply(self, mats: np.ndarray, values: np.ndarray) -> np.ndarray:
        coeffs = np.fft.rfft(values, axis=1)
        if values.ndim == 2:
            out = np.einsum("kij,jk->ik", mats, coeffs)
        else:
            out = np.einsum("kij,jkl->ikl", mats, coeffs)
        return np.fft.irfft(out, n=self.grid.n_phi, axis=1)

    def pseudo_inverse(self, values: np.ndarray) -> np.ndarray:
        cutoff = 1e-11 * self.scale

        def inv(lam):
            safe = np.where(lam > cutoff, lam, 1.0)
            return np.where(lam > cutoff, 1.0 / safe, 0.0)

        return self.apply(self.operator("pinv", inv), values)

    def helmholtz_inverse(self, coef: float, values: np.ndarray) -> np.ndarray:
        """(I - coef * laplace_scalar)^-1 applied level by level."""
        return self.apply(self.operator(("helmholtz", coef), lambda lam: 1.0 / (1.0 + coef * lam)), values)


@dataclass
class EllipticWorkspace:
    """Precomputed preconditioners and scratch for the implicit horizontal solves."""

    grid: Grid
    preconditioner: str = "spectral"
    spectrum: ZonalSpectrum | None = field(default=None, repr=False)
    last_iterations: int = 0

    def __post_init__(self):
        if self.preconditioner not in ("spectral", "none"):
            raise OutOfRange(f"unknown preconditioner {self.preconditioner!r}")
        if self.spectrum is None:
            self.spectrum = ZonalSpectrum(self.grid)

    def weights(self, ndim: int) -> np.ndarray:
        w = self.grid.cell_weights
        return w if ndim == 2 else w[:, :, None]


def _pcg(apply_a, b, precond, inner, converged, max_iters):
    """Preconditioned conjugate gradient from a zero initial guess."""
    x = np.zeros_like(b)
    r = b.copy()
    if converged(r):
        return x, 0
    z = precond(r)
    p = z.copy()
    rz = inner(r, z)
    for it in range(1, max_iters + 1):
        ap = apply_a(p)
        pap = inner(p, ap)
        if not pap > 0:
            raise EllipticDivergence(f"conjugate gradient broke down at iteration {it}")
        alpha = rz / pap
        x = x + alpha * p
        r = r - alpha * ap
        if converged(r):
            return x, it
        z = precond(r)
        rz_new = inner(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise EllipticDivergence(f"conjugate gradient did not converge in {max_iters} iterations")


def _remove_mean(x: np.ndarray, grid: Grid) -> np.ndarray:
    return x - float(np.sum(x * grid.cell_weights)) / float(np.sum(grid.cell_weights))


def barotropic_projection(v_star: VectorField, dt: float, ws: EllipticWorkspace, cfg: StepConfig):
    """Remove the vertically integrated divergence of ``v_star``.

    Solves laplace_scalar(phi_s) = int_0^1 div v_star dxi / dt for mean-zero
    phi_s and returns ``(v_star - dt * grad phi_s, phi_s)``.
    """
    grid = ws.grid
    if not (np.all(np.isfinite(v_star.theta)) and np.all(np.isfinite(v_star.phi))):
        raise NonFinite("non-finite velocity passed to the projection")
    integrated = op.vertical_velocity(v_star, grid)[..., 0]
    zero = np.zeros(grid.horizontal_shape)
    if not np.any(integrated):
        ws.last_iterations = 0
        return v_star, zero
    scale = float(np.max(np.abs(v_star.theta)) + np.max(np.abs(v_star.phi)))
    target = 0.5 * cfg.projection_tol * scale
    weights = grid.cell_weights
    b = -_remove_mean(integrated / dt, grid)

    def apply_a(x):
        return -op.laplace_scalar(x, grid)

    def inner(x, y):
        return float(np.sum(x * y * weights))

    if ws.preconditioner == "spectral":
        precond = ws.spectrum.pseudo_inverse
    else:
        def precond(r):
            return r.copy()

    def converged(r):
        return dt * float(np.max(np.abs(r))) <= target

    phi_s, ws.last_iterations = _pcg(apply_a, b, precond, inner, converged, cfg.max_cg_iters)
    phi_s = _remove_mean(phi_s, grid)
    g = op.h_grad(phi_s, grid)
    v = VectorField(v_star.theta - dt * g.theta[..., None], v_star.phi - dt * g.phi[..., None])
    return v, phi_s


# ---------------------------------------------------------------------------
# vertical diffusion


def implicit_vertical_diffusion(column, dt: float, coeff: float, bc) -> np.ndarray:
    """Backward-Euler solve of (I - dt * coeff * D_xi^2) x = column.

    ``column`` may carry leading dimensions; the last axis is the n_xi levels
    of a uniform grid on (0, 1).  The system is solved for the increment, so a
    column that the discrete operator annihilates is returned bitwise.
    """
    bc = op._bc(bc)
    s = np.asarray(column, dtype=np.float64)
    n = s.shape[-1]
    if n < 2:
        raise SingularSystem("a column needs at least two levels")
    if not (dt >= 0 and coeff >= 0 and math.isfinite(dt * coeff)):
        raise SingularSystem(f"dt * coeff must be finite and >= 0, got {dt} * {coeff}")
    d_xi = 1.0 / n
    r = dt * coeff / d_xi**2
    rho = bc.ghost_ratio(d_xi)

    jump = np.zeros(s.shape[:-1] + (n + 1,))
    jump[..., 1:-1] = s[..., 1:] - s[..., :-1]
    jump[..., -1] = rho * s[..., -1] - s[..., -1]
    rhs = r * (jump[..., 1:] - jump[..., :-1])

    lower = np.full(n, -r)
    upper = np.full(n, -r)
    lower[0] = 0.0
    upper[-1] = 0.0
    diag = np.full(n, 1.0 + 2.0 * r)
    diag[0] = 1.0 + r
    diag[-1] = 1.0 + 2.0 * r - r * rho
    flat = np.ascontiguousarray(rhs.reshape(-1, n))
    delta = kernels.tridiag_solve(lower, diag, upper, flat).reshape(s.shape)
    return s + delta


def vertical_second_derivative(s, bc, grid: Grid) -> np.ndarray:
    ext = op.ghost_extend(s, bc, grid)
    return ((ext[..., 2:] - ext[..., 1:-1]) - (ext[..., 1:-1] - ext[..., :-2])) / grid.d_xi**2


# ---------------------------------------------------------------------------
# Coriolis


def rotate_coriolis(v: VectorField, dt: float, params: Params, grid: Grid) -> VectorField:
    """Exact solution of dv/dt = -(f/R0) k x v over one step."""
    angle = coriolis(grid.theta_centers) / params.r0 * dt
    c = np.cos(angle)[:, None, None]
    s = np.sin(angle)[:, None, None]
    return VectorField(c * v.theta + s * v.phi, c * v.phi - s * v.theta)


# ---------------------------------------------------------------------------
# stability bound


def cfl_dt(state: State, grid: Grid, params: Params, cfg: StepConfig) -> float:
    """Largest stable step times ``cfg.cfl_safety``.

    min over cells of h/|v|, h^2 * min(Re1, Rt1, Rq1) / 4 (explicit horizontal
    diffusion only) and d_xi / |W|, with h the per-row effective spacing.
    """
    h = grid.effective_spacing()[:, None, None]
    bounds = []
    speed = state.v.magnitude()
    moving = speed > 0
    if np.any(moving):
        bounds.append(float(np.min(np.broadcast_to(h, speed.shape)[moving] / speed[moving])))
    if cfg.diffusion_mode == "explicit":
        reynolds = min(params.re1, params.rt1, params.rq1)
        bounds.append(float(np.min(h)) ** 2 * reynolds / 4.0)
    W = op.vertical_velocity(state.v, grid)
    wmax = np.maximum(np.abs(W[..., 1:]), np.abs(W[..., :-1]))
    if np.any(wmax > 0):
        bounds.append(grid.d_xi / float(np.max(wmax)))
    if not bounds:
        return math.inf
    return cfg.cfl_safety * min(bounds)


# ---------------------------------------------------------------------------
# horizontal Crank-Nicolson diffusion


def _cn_scalar(s, coef, ws):
    """(I - coef/2 L)^-1 (I + coef/2 L) s with L = laplace_scalar (exact spectral solve)."""
    half = 0.5 * coef
    rhs = s + half * op.laplace_scalar(s, ws.grid)
    return ws.spectrum.helmholtz_inverse(half, rhs)


def _cn_vector(v: VectorField, coef, ws, cfg):
    grid = ws.grid
    half = 0.5 * coef
    rhs = v + half * op.laplace_vector(v, grid)
    w3 = ws.weights(3)
    stack = np.stack([rhs.theta, rhs.phi])
    scale = float(np.max(np.abs(stack)))
    if scale == 0:
        return VectorField(np.zeros_like(v.theta), np.zeros_like(v.phi))

    def apply_a(x):
        lap = op.laplace_vector(VectorField(x[0], x[1]), grid)
        return x - half * np.stack([lap.theta, lap.phi])

    def precond(r):
        return np.stack([ws.spectrum.helmholtz_inverse(half, r[0]), ws.spectrum.helmholtz_inverse(half, r[1])])

    def inner(x, y):
        return float(np.sum(x * y * w3[None]))

    def converged(r):
        return float(np.max(np.abs(r))) <= 1e-13 * scale

    x, _ = _pcg(apply_a, stack, precond, inner, converged, cfg.max_cg_iters)
    return VectorField(x[0], x[1])


# ---------------------------------------------------------------------------
# the step


def explicit_tendencies(state: State, forcing: Forcing, params: Params, grid: Grid, cfg: StepConfig, W=None):
    """Filtered explicit tendencies (dv, dT, dq); Coriolis and phi_s excluded."""
    if W is None:
        W = op.vertical_velocity(state.v, grid)
    zero = np.zeros(grid.horizontal_shape)
    Phi = op.hydrostatic_phi(state.T, state.q, zero, params, grid)
    diag = Diagnosed(W=W, Phi=Phi, Phi_s=zero)
    tol = cfg.projection_tol
    dv = rhs_momentum(state, diag, params, grid, include_coriolis=False, tol=tol)
    dT = rhs_temperature(state, diag, forcing, params, grid, tol=tol)
    dq = rhs_moisture(state, diag, forcing, params, grid, tol=tol)
    if cfg.diffusion_mode == "explicit":
        dv = dv + op.laplace_vector(state.v, grid) * (1.0 / params.re1)
        dT = dT + op.laplace_scalar(state.T, grid) * (1.0 / params.rt1)
        dq = dq + op.laplace_scalar(state.q, grid) * (1.0 / params.rq1)
    dv = VectorField(polar_filter(dv.theta, grid), polar_filter(dv.phi, grid))
    return dv, polar_filter(dT, grid), polar_filter(dq, grid)


def step(
    state: State,
    forcing: Forcing,
    params: Params,
    grid: Grid,
    cfg: StepConfig,
    ws: EllipticWorkspace | None = None,
) -> State:
    """Advance ``state`` by ``cfg.dt``."""
    if ws is None:
        ws = EllipticWorkspace(grid)
    dt = cfg.dt
    W = op.vertical_velocity(state.v, grid)
    if cfg.check_cfl:
        limit = cfl_dt(state, grid, params, cfg)
        if dt > limit * (1.0 + 1e-12):
            raise CflViolation(f"dt = {dt:.6g} exceeds the stability bound {limit:.6g}")

    # overflow is reported as NonFinite below rather than as numpy warnings
    with np.errstate(all="ignore"):
        v, T, q = _substeps(state, forcing, params, grid, cfg, ws, W)

    new_state = State(v, T, q, state.t + dt)
    if not new_state.is_finite():
        err = NonFinite(f"non-finite field after step at t = {state.t + dt:.6g}")
        err.state = new_state
        raise err

    v, phi_s = barotropic_projection(v, dt, ws, cfg)
    new_state = State(v, T, q, state.t + dt, phi_s)
    scale = float(np.max(np.abs(v.theta)) + np.max(np.abs(v.phi)))
    residual = op.constraint_residual(v, grid)
    if residual > 10.0 * cfg.projection_tol * max(scale, 1e-300):
        raise EllipticDivergence(f"constraint residual {residual:.3e} after projection")
    return new_state


def _substeps(state, forcing, params, grid, cfg, ws, W):
    dt = cfg.dt
    dv, dT, dq = explicit_tendencies(state, forcing, params, grid, cfg, W=W)
    v = state.v + dv * dt
    T = state.T + dt * dT
    q = state.q + dt * dq

    v = rotate_coriolis(v, dt, params, grid)

    vel_bc = boundary_condition("velocity", params)
    v = VectorField(
        implicit_vertical_diffusion(v.theta, dt, 1.0 / params.re2, vel_bc),
        implicit_vertical_diffusion(v.phi, dt, 1.0 / params.re2, vel_bc),
    )
    T = implicit_vertical_diffusion(T, dt, 1.0 / params.rt2, boundary_condition("temperature", params))
    q = implicit_vertical_diffusion(q, dt, 1.0 / params.rq2, boundary_condition("moisture", params))

    if cfg.diffusion_mode == "cn":
        v = _cn_vector(v, dt / params.re1, ws, cfg)
        T = _cn_scalar(T, dt / params.rt1, ws)
        q = _cn_scalar(q, dt / params.rq1, ws)

    return v, T, q
