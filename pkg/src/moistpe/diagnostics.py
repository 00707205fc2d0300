"""Norm functionals, the energy budget and run-level experiment summaries.

Vertical derivatives are taken on the interior level faces, so
``|s_xi|_2^2 = sum over interior faces of (jump / d_xi)^2 d_xi``.  The trace of
a Robin field on the lower boundary is ``s_bottom / sqrt(1 + c d_xi / 2)``,
the value for which the discrete vertical dissipation splits exactly into
``|s_xi|^2 + c |trace|^2``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import operators as op
from .errors import EmptySeries, InsufficientMembers, LengthMismatch, ShapeMismatch
from .geometry import Grid, Params
from .model import Forcing, State
from .operators import VectorField


# ---------------------------------------------------------------------------
# quadrature helpers


def _weights3(grid: Grid) -> np.ndarray:
    return grid.cell_weights[:, :, None] * grid.level_weights[None, None, :]


def _check(field_, grid: Grid):
    shape = field_.shape if isinstance(field_, VectorField) else np.shape(field_)
    if shape != grid.shape:
        raise ShapeMismatch(f"field shape {shape} does not match grid {grid.shape}")


def _pointwise(field_) -> np.ndarray:
    if isinstance(field_, VectorField):
        return field_.magnitude()
    return np.abs(np.asarray(field_, dtype=np.float64))


def lp_norm(field_, p: int, grid: Grid) -> float:
    """(int_Omega |X|^p)^(1/p), with |X| the pointwise Euclidean length for vectors."""
    if p not in (2, 3, 4):
        raise ValueError(f"p must be 2, 3 or 4, got {p}")
    _check(field_, grid)
    mag = _pointwise(field_)
    return float(np.sum(mag**p * _weights3(grid))) ** (1.0 / p)


def _sq(a, w) -> float:
    return float(np.sum(a * a * w))


def _vec_sq(u: VectorField, w) -> float:
    return float(np.sum((u.theta * u.theta + u.phi * u.phi) * w))


def _interior_jump_sq(s: np.ndarray, grid: Grid) -> float:
    jump = (s[..., 1:] - s[..., :-1]) / grid.d_xi
    return float(np.sum(jump * jump * grid.cell_weights[:, :, None] * grid.d_xi))


def xi_derivative_sq(field_, grid: Grid) -> float:
    """|d field / d xi|_2^2 over the interior level faces."""
    if isinstance(field_, VectorField):
        return _interior_jump_sq(field_.theta, grid) + _interior_jump_sq(field_.phi, grid)
    return _interior_jump_sq(np.asarray(field_), grid)


def bottom_trace(s: np.ndarray, coef: float, grid: Grid) -> np.ndarray:
    return s[..., -1] / math.sqrt(1.0 + 0.5 * coef * grid.d_xi)


def trace_norm(s: np.ndarray, coef: float, p: int, grid: Grid) -> float:
    tr = np.abs(bottom_trace(s, coef, grid))
    return float(np.sum(tr**p * grid.cell_weights)) ** (1.0 / p)


def grad_sq(s: np.ndarray, grid: Grid) -> float:
    w = _weights3(grid) if np.ndim(s) == 3 else grid.cell_weights
    return _vec_sq(op.h_grad(s, grid), w)


def covariant_sq(u: VectorField, grid: Grid) -> float:
    """int |nabla_{e_theta} u|^2 + |nabla_{e_phi} u|^2 (one level or the full shell)."""
    w = _weights3(grid) if len(u.shape) == 3 else grid.cell_weights
    along_theta, along_phi = op.covariant_derivatives(u, grid)
    return _vec_sq(along_theta, w) + _vec_sq(along_phi, w)


def d_xi_centres(field_, grid: Grid):
    """Centred vertical derivative with Neumann closure (used for coefficient series)."""
    if isinstance(field_, VectorField):
        return VectorField(op.d_xi(field_.theta, op.NEUMANN, grid), op.d_xi(field_.phi, op.NEUMANN, grid))
    return op.d_xi(field_, op.NEUMANN, grid)


# ---------------------------------------------------------------------------
# norms of a state


def h1_norm(state: State, grid: Grid, params: Params) -> dict:
    """V-norms {v, T, q, U}; squares satisfy U^2 = v^2 + T^2 + q^2 exactly."""
    w = _weights3(grid)
    v2 = covariant_sq(state.v, grid) + xi_derivative_sq(state.v, grid) + _vec_sq(state.v, w)
    T2 = grad_sq(state.T, grid) + xi_derivative_sq(state.T, grid) + _sq(state.T, w)
    q2 = grad_sq(state.q, grid) + xi_derivative_sq(state.q, grid) + _sq(state.q, w)
    return {"v": math.sqrt(v2), "T": math.sqrt(T2), "q": math.sqrt(q2), "U": math.sqrt(v2 + T2 + q2)}


def energy(state: State, grid: Grid) -> float:
    """|U|_2^2 = |v|_2^2 + |T|_2^2 + |q|_2^2."""
    w = _weights3(grid)
    return _vec_sq(state.v, w) + _sq(state.T, w) + _sq(state.q, w)


def barotropic_baroclinic_energy(state: State, grid: Grid) -> tuple[float, float]:
    """(||v_bar||^2 on the sphere, |v_tilde|_2^2); they sum to |v|_2^2."""
    _check(state.v, grid)
    mean = op.vertical_average(state.v)
    fluc = state.v - mean
    w = _weights3(grid)
    return _vec_sq(mean, w), _vec_sq(fluc, w)


def barotropic_h1(state: State, grid: Grid) -> float:
    mean = op.vertical_average(state.v)
    level = VectorField(np.ascontiguousarray(mean.theta[..., 0]), np.ascontiguousarray(mean.phi[..., 0]))
    return math.sqrt(covariant_sq(level, grid) + _vec_sq(level, grid.cell_weights))


# ---------------------------------------------------------------------------
# energy budget


@dataclass(frozen=True)
class EnergyBudget:
    diss_v: float
    diss_T: float
    diss_q: float
    forcing_T: float
    forcing_q: float
    energy: float
    energy_residual: float

    @property
    def dissipation(self) -> float:
        return self.diss_v + self.diss_T + self.diss_q

    @property
    def forcing(self) -> float:
        return self.forcing_T + self.forcing_q


def dissipation_terms(state: State, params: Params, grid: Grid) -> tuple[float, float, float]:
    """Viscous and diffusive dissipation integrals of the L2 energy balance."""
    w = _weights3(grid)
    diss_v = (covariant_sq(state.v, grid) + _vec_sq(state.v, w)) / params.re1 + xi_derivative_sq(state.v, grid) / params.re2
    trace_T = trace_norm(state.T, params.alpha_s, 2, grid) ** 2
    trace_q = trace_norm(state.q, params.beta_s, 2, grid) ** 2
    diss_T = (
        grad_sq(state.T, grid) / params.rt1
        + xi_derivative_sq(state.T, grid) / params.rt2
        + params.alpha_s * trace_T / params.rt2
    )
    diss_q = (
        grad_sq(state.q, grid) / params.rq1
        + xi_derivative_sq(state.q, grid) / params.rq2
        + params.beta_s * trace_q / params.rq2
    )
    return diss_v, diss_T, diss_q


def forcing_terms(state: State, forcing: Forcing, grid: Grid) -> tuple[float, float]:
    w = _weights3(grid)
    return float(np.sum(forcing.Q1 * state.T * w)), float(np.sum(forcing.Q2 * state.q * w))


def energy_budget(state: State, forcing: Forcing, params: Params, grid: Grid, previous: State | None = None) -> EnergyBudget:
    """Terms of the L2 energy balance at ``state``.

    With ``previous`` given, ``energy_residual`` is
    |(E - E_prev)/(2 dt) + mean(D) - mean(F)| with D and F averaged over the
    two states (E = |U|_2^2); otherwise it is 0.
    """
    d = dissipation_terms(state, params, grid)
    f = forcing_terms(state, forcing, grid)
    e = energy(state, grid)
    residual = 0.0
    if previous is not None and state.t != previous.t:
        d0 = dissipation_terms(previous, params, grid)
        f0 = forcing_terms(previous, forcing, grid)
        rate = 0.5 * (e - energy(previous, grid)) / (state.t - previous.t)
        residual = abs(rate + 0.5 * (sum(d) + sum(d0)) - 0.5 * (sum(f) + sum(f0)))
    return EnergyBudget(d[0], d[1], d[2], f[0], f[1], e, residual)


# ---------------------------------------------------------------------------
# per-step record


@dataclass(frozen=True)
class DiagRecord:
    t: float
    energy: float
    l2_v: float
    l2_T: float
    l2_q: float
    l3_vfluc: float
    l3_T: float
    l4_vfluc: float
    l4_T: float
    l4_q: float
    h1_v: float
    h1_T: float
    h1_q: float
    h1_U: float
    trace_T_l2: float
    trace_q_l2: float
    trace_T_l4: float
    trace_q_l4: float
    vxi_l2: float
    txi_l2: float
    qxi_l2: float
    barotropic_h1: float
    e_bar: float
    e_fluc: float
    constraint_residual: float
    diss_v: float
    diss_T: float
    diss_q: float
    forcing_T: float
    forcing_q: float
    energy_residual: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> list[float]:
        return list(asdict(self).values())


def diag_record(state: State, forcing: Forcing, params: Params, grid: Grid, previous: State | None = None) -> DiagRecord:
    fluc = op.fluctuation(state.v)
    h1 = h1_norm(state, grid, params)
    budget = energy_budget(state, forcing, params, grid, previous)
    e_bar, e_fluc = barotropic_baroclinic_energy(state, grid)
    return DiagRecord(
        t=float(state.t),
        energy=budget.energy,
        l2_v=lp_norm(state.v, 2, grid),
        l2_T=lp_norm(state.T, 2, grid),
        l2_q=lp_norm(state.q, 2, grid),
        l3_vfluc=lp_norm(fluc, 3, grid),
        l3_T=lp_norm(state.T, 3, grid),
        l4_vfluc=lp_norm(fluc, 4, grid),
        l4_T=lp_norm(state.T, 4, grid),
        l4_q=lp_norm(state.q, 4, grid),
        h1_v=h1["v"],
        h1_T=h1["T"],
        h1_q=h1["q"],
        h1_U=h1["U"],
        trace_T_l2=trace_norm(state.T, params.alpha_s, 2, grid),
        trace_q_l2=trace_norm(state.q, params.beta_s, 2, grid),
        trace_T_l4=trace_norm(state.T, params.alpha_s, 4, grid),
        trace_q_l4=trace_norm(state.q, params.beta_s, 4, grid),
        vxi_l2=math.sqrt(xi_derivative_sq(state.v, grid)),
        txi_l2=math.sqrt(xi_derivative_sq(state.T, grid)),
        qxi_l2=math.sqrt(xi_derivative_sq(state.q, grid)),
        barotropic_h1=barotropic_h1(state, grid),
        e_bar=e_bar,
        e_fluc=e_fluc,
        constraint_residual=op.constraint_residual(state.v, grid),
        diss_v=budget.diss_v,
        diss_T=budget.diss_T,
        diss_q=budget.diss_q,
        forcing_T=budget.forcing_T,
        forcing_q=budget.forcing_q,
        energy_residual=budget.energy_residual,
    )


# ---------------------------------------------------------------------------
# unforced decay


@dataclass(frozen=True)
class DecayReport:
    c0: float
    fitted_rate: float
    monotone: bool
    envelope_ok: bool


def decay_envelope(series, params: Params, slack: float = 1e-10) -> DecayReport:
    """Monotonicity, fitted log-rate and the relaxed exp(-c0 t / 2) envelope of |U|_2^2."""
    if len(series) == 0:
        raise EmptySeries("decay_envelope needs at least one record")
    t = np.array([r.t for r in series], dtype=np.float64)
    e = np.array([r.energy for r in series], dtype=np.float64)
    c0 = params.decay_rate
    monotone = bool(np.all(e[1:] <= e[:-1] * (1.0 + slack)))
    envelope_ok = bool(np.all(e <= e[0] * np.exp(-0.5 * c0 * (t - t[0]))))
    positive = e > 0
    fitted = 0.0
    if np.count_nonzero(positive) >= 2:
        tp, le = t[positive], np.log(e[positive])
        tc = tp - tp.mean()
        denom = float(np.sum(tc * tc))
        if denom > 0:
            fitted = -float(np.sum(tc * (le - le.mean()))) / denom
    return DecayReport(c0=c0, fitted_rate=fitted, monotone=monotone, envelope_ok=envelope_ok)


# ---------------------------------------------------------------------------
# twin runs


def separation(a: State, b: State, grid: Grid) -> float:
    w = _weights3(grid)
    return _vec_sq(a.v - b.v, w) + _sq(a.T - b.T, w) + _sq(a.q - b.q, w)


def growth_coefficients(state: State, grid: Grid) -> dict:
    """Bracketed coefficients of the difference-energy inequality, unit constants.

    Returns K_v, K_T, K_q (multiplying |v|^2, |T|^2, |q|^2 of the difference)
    and K = max of the three.
    """
    v4 = lp_norm(state.v, 4, grid)
    T4 = lp_norm(state.T, 4, grid)
    q4 = lp_norm(state.q, 4, grid)
    w = _weights3(grid)
    vxi = d_xi_centres(state.v, grid)
    Txi = d_xi_centres(state.T, grid)
    qxi = d_xi_centres(state.q, grid)
    vxi2 = _vec_sq(vxi, w)
    Txi2 = _sq(Txi, w)
    qxi2 = _sq(qxi, w)
    k_v = v4**8 + T4**8 + q4**8 + vxi2 + (vxi2 + 1.0) * covariant_sq(vxi, grid)
    k_T = v4**8 + T4**8 + Txi2 + (Txi2 + 1.0) * grad_sq(Txi, grid)
    k_q = v4**8 + T4**2 + T4**4 + q4**8 + qxi2 + (qxi2 + 1.0) * grad_sq(qxi, grid)
    return {"K_v": k_v, "K_T": k_T, "K_q": k_q, "K": max(k_v, k_T, k_q)}


@dataclass(frozen=True)
class TwinSeries:
    t: np.ndarray
    sep: np.ndarray
    K: np.ndarray
    K_v: np.ndarray
    K_T: np.ndarray
    K_q: np.ndarray


def twin_separation(run_a, run_b, grid: Grid) -> TwinSeries:
    """Squared L2 separation of two runs and the growth coefficients of run B."""
    if len(run_a) != len(run_b):
        raise LengthMismatch(f"runs have {len(run_a)} and {len(run_b)} states")
    t, sep, ks = [], [], []
    for a, b in zip(run_a, run_b):
        _check(a.v, grid)
        _check(b.v, grid)
        t.append(float(b.t))
        sep.append(separation(a, b, grid))
        ks.append(growth_coefficients(b, grid))
    col = {k: np.array([d[k] for d in ks]) for k in ("K", "K_v", "K_T", "K_q")}
    return TwinSeries(np.array(t), np.array(sep), col["K"], col["K_v"], col["K_T"], col["K_q"])


# ---------------------------------------------------------------------------
# absorbing ball


@dataclass(frozen=True)
class AbsorbReport:
    rho_hat: float
    entry_times: list
    spread: float
    late_sup: list


def absorbing_stats(ensemble, t_transient: float) -> AbsorbReport:
    """Empirical absorbing radius of ||U|| over an ensemble of DiagRecord series."""
    if len(ensemble) < 2:
        raise InsufficientMembers(f"need at least 2 members, got {len(ensemble)}")
    late_sup = []
    for series in ensemble:
        if len(series) == 0:
            raise EmptySeries("ensemble member has an empty series")
        late = [r.h1_U for r in series if r.t >= t_transient]
        if not late:
            raise EmptySeries(f"member series ends before t_transient = {t_transient}")
        late_sup.append(max(late))
    rho_hat = max(late_sup)
    entry = []
    for series in ensemble:
        norms = np.array([r.h1_U for r in series])
        above = np.nonzero(norms > rho_hat)[0]
        idx = 0 if above.size == 0 else int(above[-1]) + 1
        entry.append(float(series[idx].t) if idx < len(series) else math.inf)
    low = min(late_sup)
    if low > 0:
        spread = rho_hat / low
    else:
        spread = 1.0 if rho_hat == 0 else math.inf
    return AbsorbReport(rho_hat=rho_hat, entry_times=entry, spread=spread, late_sup=late_sup)


# ---------------------------------------------------------------------------
# vertical Poincare inequality


def poincare_gap(s: np.ndarray, coef: float, grid: Grid) -> float:
    """2|s_xi|^2 + 2|trace|^2 - |s|^2 (nonnegative up to O(d_xi))."""
    return (
        2.0 * xi_derivative_sq(s, grid)
        + 2.0 * trace_norm(s, coef, 2, grid) ** 2
        - _sq(s, _weights3(grid))
    )
