"""Discrete spherical shell S^2 x (0, 1): grid, quadrature and coordinate maps.

Colatitude cells are centred half a cell away from both poles, so every
``1/sin(theta)`` and ``cot(theta)`` evaluated on the grid is finite.  The
horizontal quadrature weight of a cell is its exact spherical area, which is
``sin(theta_i) dtheta dphi`` up to a constant factor; the weights are then
rescaled so that the discrete sphere area is 4*pi.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import InvalidResolution, OutOfRange, ShapeMismatch


@dataclass(frozen=True)
class Params:
    """Physical and model constants (all nondimensional)."""

    re1: float = 10.0
    re2: float = 10.0
    rt1: float = 10.0
    rt2: float = 10.0
    rq1: float = 10.0
    rq2: float = 10.0
    r0: float = 1.0
    a: float = 0.618
    b: float = 1.0
    p_cap: float = 1000.0
    p0: float = 200.0
    alpha_s: float = 1.0
    beta_s: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise OutOfRange(f"params.{f.name} must be finite and > 0, got {value!r}")
        if not self.p0 < self.p_cap:
            raise OutOfRange(f"params.p0 must be < params.p_cap ({self.p0} >= {self.p_cap})")

    @property
    def decay_rate(self) -> float:
        """Rate c0 of the unforced L2 decay bound."""
        return min(
            1.0 / self.re1,
            1.0 / (2.0 * self.rt2),
            self.alpha_s / (2.0 * self.rt2),
            1.0 / (2.0 * self.rq2),
            self.beta_s / (2.0 * self.rq2),
        )


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    n_theta: int
    n_phi: int
    n_xi: int
    d_theta: float
    d_phi: float
    d_xi: float
    theta_centers: np.ndarray
    phi_centers: np.ndarray
    xi_centers: np.ndarray
    xi_faces: np.ndarray
    # sin(theta) on the n_theta + 1 colatitude faces, exactly 0 at both poles
    face_sin: np.ndarray
    # cell area divided by d_phi, normalised so the sphere area is 4*pi
    area: np.ndarray
    cot: np.ndarray
    cell_weights: np.ndarray
    level_weights: np.ndarray
    polar_filter_band: int = 0
    filter_cutoff: np.ndarray = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_theta, self.n_phi, self.n_xi)

    @property
    def horizontal_shape(self) -> tuple[int, int]:
        return (self.n_theta, self.n_phi)

    def effective_spacing(self) -> np.ndarray:
        """Smallest horizontal spacing per colatitude row, after polar filtering."""
        sin_t = np.sin(self.theta_centers)
        zonal = sin_t * self.d_phi * (self.n_phi // 2) / self.filter_cutoff
        return np.minimum(self.d_theta, zonal)


def build_grid(n_theta: int, n_phi: int, n_xi: int, polar_filter_band: int = 0) -> Grid:
    if not all(isinstance(n, (int, np.integer)) for n in (n_theta, n_phi, n_xi, polar_filter_band)):
        raise InvalidResolution("grid dimensions must be integers")
    if n_theta < 4:
        raise InvalidResolution(f"n_theta must be >= 4, got {n_theta}")
    if n_phi < 4 or n_phi % 2:
        raise InvalidResolution(f"n_phi must be even and >= 4, got {n_phi}")
    if n_xi < 2:
        raise InvalidResolution(f"n_xi must be >= 2, got {n_xi}")
    if polar_filter_band < 0 or 2 * polar_filter_band >= n_theta:
        raise InvalidResolution(f"polar_filter_band must be in [0, n_theta/2), got {polar_filter_band}")

    d_theta = math.pi / n_theta
    d_phi = 2.0 * math.pi / n_phi
    d_xi = 1.0 / n_xi
    theta = (np.arange(n_theta) + 0.5) * d_theta
    phi = (np.arange(n_phi) + 0.5) * d_phi
    xi = (np.arange(n_xi) + 0.5) * d_xi
    xi_faces = np.arange(n_xi + 1) * d_xi

    theta_faces = np.arange(n_theta + 1) * d_theta
    face_sin = np.sin(theta_faces)
    face_sin[0] = face_sin[-1] = 0.0
    area = np.cos(theta_faces[:-1]) - np.cos(theta_faces[1:])
    weights = np.repeat((area * d_phi)[:, None], n_phi, axis=1)
    area = area * (4.0 * math.pi / weights.sum())
    weights = np.repeat((area * d_phi)[:, None], n_phi, axis=1)

    cutoff = np.full(n_theta, n_phi // 2, dtype=np.float64)
    if polar_filter_band:
        edge = math.sin(theta[polar_filter_band])
        for i in list(range(polar_filter_band)) + list(range(n_theta - polar_filter_band, n_theta)):
            cutoff[i] = max(1, math.floor((n_phi // 2) * math.sin(theta[i]) / edge))

    return Grid(
        n_theta=int(n_theta),
        n_phi=int(n_phi),
        n_xi=int(n_xi),
        d_theta=d_theta,
        d_phi=d_phi,
        d_xi=d_xi,
        theta_centers=_frozen(theta),
        phi_centers=_frozen(phi),
        xi_centers=_frozen(xi),
        xi_faces=_frozen(xi_faces),
        face_sin=_frozen(face_sin),
        area=_frozen(area),
        cot=_frozen(np.cos(theta) / np.sin(theta)),
        cell_weights=_frozen(weights),
        level_weights=_frozen(np.full(n_xi, d_xi)),
        polar_filter_band=int(polar_filter_band),
        filter_cutoff=_frozen(cutoff),
    )


def pressure_of_xi(xi, params: Params):
    xi_arr = np.asarray(xi, dtype=np.float64)
    if np.any(xi_arr < 0.0) or np.any(xi_arr > 1.0) or not np.all(np.isfinite(xi_arr)):
        raise OutOfRange("xi must lie in [0, 1]")
    p = (params.p_cap - params.p0) * xi_arr + params.p0
    return float(p) if p.ndim == 0 else p


def coriolis(theta):
    return 2.0 * np.cos(theta)


def _check_horizontal(field_, grid: Grid, ndim: int):
    shape = np.shape(field_)
    expected = grid.horizontal_shape if ndim == 2 else grid.shape
    if shape != expected:
        raise ShapeMismatch(f"field shape {shape} does not match grid {expected}")


def integrate_sphere(field_, grid: Grid) -> float:
    """Quadrature of a single-level field over the unit sphere."""
    _check_horizontal(field_, grid, 2)
    return float(np.sum(np.asarray(field_) * grid.cell_weights))


def integrate_omega(field_, grid: Grid) -> float:
    """Quadrature of a 3-D field over S^2 x (0, 1)."""
    _check_horizontal(field_, grid, 3)
    w = grid.cell_weights[:, :, None] * grid.level_weights[None, None, :]
    return float(np.sum(np.asarray(field_) * w))


def polar_filter(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Zonal spectral truncation inside the polar band rows.

    Row ``i`` keeps zonal wavenumbers up to ``grid.filter_cutoff[i]``; rows
    outside the band are returned unchanged (bitwise).
    """
    band = grid.polar_filter_band
    if band == 0:
        return values
    out = np.array(values, dtype=np.float64, copy=True)
    rows = np.r_[0:band, grid.n_theta - band:grid.n_theta]
    modes = np.fft.rfft(out[rows], axis=1)
    m = np.arange(modes.shape[1])
    keep = m[None, :] <= grid.filter_cutoff[rows][:, None]
    keep = keep.reshape(keep.shape + (1,) * (modes.ndim - 2))
    out[rows] = np.fft.irfft(np.where(keep, modes, 0.0), n=grid.n_phi, axis=1)
    return out
