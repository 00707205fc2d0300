"""Mimetic horizontal and vertical operators on the spherical-shell grid.

Fields live at cell centres and are float64 arrays shaped
``(n_theta, n_phi)`` (one level) or ``(n_theta, n_phi, n_levels)``.
Horizontal vectors are :class:`VectorField` pairs of such arrays.

Only ``h_div`` is written as a stencil.  ``h_grad`` is its negative adjoint
under the area quadrature, the Laplacians are products of the two, and the
pressure-gradient force is the adjoint of the vertical-velocity coupling in
the thermodynamic equation.  The integration-by-parts identities of the
continuous problem therefore hold to round-off at every resolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConstraintViolated, ShapeMismatch, UnknownBC
from .geometry import Grid, Params


@dataclass(frozen=True, eq=False)
class VectorField:
    theta: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        if np.shape(self.theta) != np.shape(self.phi):
            raise ShapeMismatch("vector components must share a shape")

    @property
    def shape(self):
        return np.shape(self.theta)

    def __add__(self, other):
        return VectorField(self.theta + other.theta, self.phi + other.phi)

    def __sub__(self, other):
        return VectorField(self.theta - other.theta, self.phi - other.phi)

    def __neg__(self):
        return VectorField(-self.theta, -self.phi)

    def __mul__(self, factor):
        return VectorField(self.theta * factor, self.phi * factor)

    __rmul__ = __mul__

    def dot(self, other):
        return self.theta * other.theta + self.phi * other.phi

    def magnitude(self):
        return np.sqrt(self.theta**2 + self.phi**2)

    def copy(self):
        return VectorField(np.array(self.theta, copy=True), np.array(self.phi, copy=True))

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape))


# ---------------------------------------------------------------------------
# helpers


def _metric(grid: Grid):
    cache = getattr(grid, "_op_metric", None)
    if cache is None:
        half_inv_area = 0.5 / grid.area
        zonal = grid.d_theta / (grid.area * 2.0 * grid.d_phi)
        cache = (np.ascontiguousarray(grid.face_sin), half_inv_area, zonal)
        object.__setattr__(grid, "_op_metric", cache)
    return cache


def _as3d(a, grid: Grid):
    a = np.asarray(a, dtype=np.float64)
    if a.shape[:2] != grid.horizontal_shape or a.ndim not in (2, 3):
        raise ShapeMismatch(f"field shape {a.shape} does not match grid {grid.horizontal_shape}")
    return np.ascontiguousarray(a.reshape(grid.n_theta, grid.n_phi, -1)), a.shape


def _check_3d(a, grid: Grid, levels=None):
    levels = grid.n_xi if levels is None else levels
    if np.shape(a) != (grid.n_theta, grid.n_phi, levels):
        raise ShapeMismatch(f"field shape {np.shape(a)} does not match grid {grid.shape[:2] + (levels,)}")


def _row(values, ndim):
    return np.reshape(values, (-1,) + (1,) * (ndim - 1))


def _same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ShapeMismatch(f"shape mismatch: {sorted(shapes)}")


def inner_sphere(f, g, grid: Grid) -> float:
    return float(np.sum(f * g * grid.cell_weights))


def inner_omega(f, g, grid: Grid) -> float:
    w = grid.cell_weights[:, :, None] * grid.level_weights[None, None, :]
    return float(np.sum(f * g * w))


# ---------------------------------------------------------------------------
# horizontal operators


def h_div(u: VectorField, grid: Grid) -> np.ndarray:
    ut, shape = _as3d(u.theta, grid)
    up, shape_p = _as3d(u.phi, grid)
    if shape != shape_p:
        raise ShapeMismatch("vector components must share a shape")
    face_sin, half_inv_area, zonal = _metric(grid)
    return kernels.h_div(ut, up, face_sin, half_inv_area, zonal).reshape(shape)


def h_grad(s, grid: Grid) -> VectorField:
    s3, shape = _as3d(s, grid)
    face_sin, half_inv_area, zonal = _metric(grid)
    gt, gp = kernels.h_grad(s3, face_sin, half_inv_area, zonal)
    return VectorField(gt.reshape(shape), gp.reshape(shape))


def laplace_scalar(s, grid: Grid) -> np.ndarray:
    return h_div(h_grad(s, grid), grid)


def covariant_derivatives(u: VectorField, grid: Grid):
    """Return (nabla_{e_theta} u, nabla_{e_phi} u) as two VectorFields."""
    cot = _row(grid.cot, len(u.shape))
    g_theta = h_grad(u.theta, grid)
    g_phi = h_grad(u.phi, grid)
    along_theta = VectorField(g_theta.theta, g_phi.theta)
    along_phi = VectorField(g_theta.phi - cot * u.phi, g_phi.phi + cot * u.theta)
    return along_theta, along_phi


def laplace_vector(u: VectorField, grid: Grid) -> VectorField:
    """Vector Laplacian with -lap = C*C + I, C the covariant derivatives."""
    cot = _row(grid.cot, len(u.shape))
    along_theta, along_phi = covariant_derivatives(u, grid)
    neg_t = -h_div(VectorField(along_theta.theta, along_phi.theta), grid) + cot * along_phi.phi + u.theta
    neg_p = -h_div(VectorField(along_theta.phi, along_phi.phi), grid) - cot * along_phi.theta + u.phi
    return VectorField(-neg_t, -neg_p)


def advect_scalar(v: VectorField, s, grid: Grid) -> np.ndarray:
    """Skew-symmetric horizontal transport (1/2)[v.grad s + div(s v) - s div v]."""
    _same_shape(v.theta, v.phi, s)
    advective = v.dot(h_grad(s, grid))
    flux = h_div(v * s, grid)
    return 0.5 * (advective + flux - s * h_div(v, grid))


def advect_vector(v: VectorField, w: VectorField, grid: Grid) -> VectorField:
    _same_shape(v.theta, w.theta)
    cot = _row(grid.cot, len(v.shape))
    div_v = h_div(v, grid)

    def transport(c):
        return 0.5 * (v.dot(h_grad(c, grid)) + h_div(v * c, grid) - c * div_v)

    return VectorField(
        transport(w.theta) - v.phi * w.phi * cot,
        transport(w.phi) + v.phi * w.theta * cot,
    )


# ---------------------------------------------------------------------------
# vertical structure


def vertical_velocity(v: VectorField, grid: Grid) -> np.ndarray:
    """W on the n_xi + 1 level faces; face 0 is xi = 0, face n_xi is xi = 1."""
    _check_3d(v.theta, grid)
    _check_3d(v.phi, grid)
    div = h_div(v, grid)
    W = np.zeros(grid.shape[:2] + (grid.n_xi + 1,))
    W[..., :-1] = np.cumsum(div[..., ::-1], axis=-1)[..., ::-1] * grid.d_xi
    return W


def constraint_residual(v: VectorField, grid: Grid) -> float:
    """max |int_0^1 div v dxi| over the sphere."""
    return float(np.max(np.abs(vertical_velocity(v, grid)[..., 0])))


def vertical_transport(W, s, grid: Grid) -> np.ndarray:
    """Face-W times centred d/dxi, averaged to centres; zero flux at both ends."""
    jump = np.zeros(s.shape[:2] + (s.shape[2] + 1,))
    jump[..., 1:-1] = s[..., 1:] - s[..., :-1]
    flux = W * jump
    return (0.5 / grid.d_xi) * (flux[..., 1:] + flux[..., :-1])


def full_advect(v: VectorField, field, grid: Grid, W=None, tol: float = 1e-10):
    """Horizontal skew transport plus W d/dxi for a scalar or vector field.

    Raises ConstraintViolated when ``max |W(xi=0)|`` exceeds ``100 * tol``
    times the velocity magnitude.
    """
    if W is None:
        W = vertical_velocity(v, grid)
    scale = float(np.max(np.abs(v.theta)) + np.max(np.abs(v.phi)))
    residual = float(np.max(np.abs(W[..., 0])))
    if residual > 100.0 * tol * max(scale, 1e-300):
        raise ConstraintViolated(f"vertically integrated divergence {residual:.3e} exceeds tolerance")
    if isinstance(field, VectorField):
        horiz = advect_vector(v, field, grid)
        return VectorField(
            horiz.theta + vertical_transport(W, field.theta, grid),
            horiz.phi + vertical_transport(W, field.phi, grid),
        )
    _check_3d(field, grid)
    return advect_scalar(v, field, grid) + vertical_transport(W, field, grid)


def vertical_average(u, grid: Grid | None = None):
    """Discrete vertical mean broadcast back over the levels.

    Computed as u_0 + mean(u_k - u_0) so that a level-independent field is
    returned bitwise unchanged.
    """
    if isinstance(u, VectorField):
        return VectorField(vertical_average(u.theta), vertical_average(u.phi))
    u = np.asarray(u, dtype=np.float64)
    base = u[..., :1]
    mean = base + np.sum(u - base, axis=-1, keepdims=True) / u.shape[-1]
    return np.broadcast_to(mean, u.shape).copy()


def fluctuation(u, grid: Grid | None = None):
    return u - vertical_average(u)


# ---------------------------------------------------------------------------
# vertical boundary conditions


@dataclass(frozen=True)
class BoundaryCondition:
    """Zero-flux at xi = 0 and either zero-flux or Robin d/dxi = -coef s at xi = 1."""

    kind: str = "neumann"
    coef: float = 0.0

    def __post_init__(self):
        if self.kind not in ("neumann", "robin"):
            raise UnknownBC(f"unknown boundary kind {self.kind!r}")
        if self.kind == "neumann" and self.coef != 0.0:
            raise UnknownBC("a Neumann condition carries no coefficient")

    def ghost_ratio(self, d_xi: float) -> float:
        """Bottom ghost value divided by the adjacent interior value."""
        if self.kind == "neumann":
            return 1.0
        half = 0.5 * self.coef * d_xi
        return (1.0 - half) / (1.0 + half)


NEUMANN = BoundaryCondition()


def robin(coef: float) -> BoundaryCondition:
    return BoundaryCondition("robin", float(coef))


def _bc(bc) -> BoundaryCondition:
    if not isinstance(bc, BoundaryCondition):
        raise UnknownBC(f"unsupported boundary descriptor {bc!r}")
    return bc


def ghost_extend(s, bc, grid: Grid) -> np.ndarray:
    """Return s with one ghost level on each end (n_xi + 2 levels)."""
    bc = _bc(bc)
    _check_3d(s, grid)
    ext = np.empty(s.shape[:2] + (s.shape[2] + 2,))
    ext[..., 1:-1] = s
    ext[..., 0] = s[..., 0]
    ext[..., -1] = bc.ghost_ratio(grid.d_xi) * s[..., -1]
    return ext


def d_xi(s, bc, grid: Grid) -> np.ndarray:
    """Centred vertical derivative at cell centres using ghost closure."""
    ext = ghost_extend(s, bc, grid)
    return (ext[..., 2:] - ext[..., :-2]) / (2.0 * grid.d_xi)


def face_derivative(s, bc, grid: Grid) -> np.ndarray:
    """d/dxi on the n_xi + 1 faces (zero at xi = 0, Robin/Neumann at xi = 1)."""
    ext = ghost_extend(s, bc, grid)
    out = (ext[..., 1:] - ext[..., :-1]) / grid.d_xi
    out[..., 0] = 0.0
    return out


def bottom_face_value(s, bc, grid: Grid) -> np.ndarray:
    """Value of s on the xi = 1 face implied by the ghost closure."""
    ext = ghost_extend(s, bc, grid)
    return 0.5 * (ext[..., -1] + ext[..., -2])


# ---------------------------------------------------------------------------
# hydrostatics


def layer_factors(params: Params, grid: Grid) -> np.ndarray:
    """Exact per-cell integral of bP/p over xi (log quadrature)."""
    p_faces = (params.p_cap - params.p0) * grid.xi_faces + params.p0
    return params.b * params.p_cap / (params.p_cap - params.p0) * np.log(p_faces[1:] / p_faces[:-1])


def hydrostatic_phi_faces(T, q, phi_s, params: Params, grid: Grid) -> np.ndarray:
    """Geopotential on the level faces: phi_s + int_xi^1 (bP/p)(1+aq)T."""
    _check_3d(T, grid)
    _check_3d(q, grid)
    phi_s = np.asarray(phi_s, dtype=np.float64)
    if phi_s.shape != grid.horizontal_shape:
        raise ShapeMismatch("phi_s must be a single-level field")
    layer = layer_factors(params, grid) * (1.0 + params.a * q) * T
    out = np.empty(grid.shape[:2] + (grid.n_xi + 1,))
    out[..., -1] = 0.0
    out[..., :-1] = np.cumsum(layer[..., ::-1], axis=-1)[..., ::-1]
    return out + phi_s[..., None]


def hydrostatic_phi(T, q, phi_s, params: Params, grid: Grid) -> np.ndarray:
    faces = hydrostatic_phi_faces(T, q, phi_s, params, grid)
    return 0.5 * (faces[..., 1:] + faces[..., :-1])


def pressure_gradient_force(T, q, params: Params, grid: Grid) -> VectorField:
    """int_xi^1 (bP/p) grad[(1+aq)T] dxi', built as the adjoint of the buoyancy term."""
    zero = np.zeros(grid.horizontal_shape)
    return h_grad(hydrostatic_phi(T, q, zero, params, grid), grid)


def buoyancy(q, W, params: Params, grid: Grid) -> np.ndarray:
    """(bP/p)(1+aq) W at cell centres (cell-mean bP/p, face-averaged W)."""
    _check_3d(q, grid)
    _check_3d(W, grid, grid.n_xi + 1)
    mean_bp = layer_factors(params, grid) / grid.d_xi
    return mean_bp * (1.0 + params.a * q) * (0.5 * (W[..., 1:] + W[..., :-1]))
