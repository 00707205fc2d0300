import math

import numpy as np
import pytest

from moistpe import operators as op
from moistpe.errors import CflViolation, EllipticDivergence, NonFinite, OutOfRange, SingularSystem
from moistpe.geometry import Params, build_grid
from moistpe.harness.initial import baroclinic_perturbation, random_smooth_state
from moistpe.model import Forcing, State
from moistpe.operators import VectorField
from moistpe.timestepper import (
    EllipticWorkspace,
    StepConfig,
    ZonalSpectrum,
    barotropic_projection,
    cfl_dt,
    implicit_vertical_diffusion,
    rotate_coriolis,
    step,
)

from conftest import constrained_vector, random_vector


def _energy(s, g):
    w = g.cell_weights[:, :, None] / g.n_xi
    return float(np.sum((s.v.theta**2 + s.v.phi**2 + s.T**2 + s.q**2) * w))


def _lift(a2, g):
    return np.ascontiguousarray(np.repeat(a2[..., None], g.n_xi, 2))


def test_step_config_validation():
    for kwargs in ({"dt": 0.0}, {"dt": math.nan}, {"dt": 1.0, "cfl_safety": 1.5}, {"dt": 1.0, "projection_tol": 0.0},
                   {"dt": 1.0, "max_cg_iters": 0}, {"dt": 1.0, "diffusion_mode": "rk4"}):
        with pytest.raises(OutOfRange):
            StepConfig(**kwargs)


# ---------------------------------------------------------------------------
# projection


def _dense_projection_oracle(g, integrated, dt):
    n = g.n_theta * g.n_phi
    cols = [op.laplace_scalar(e.reshape(g.horizontal_shape), g).ravel() for e in np.eye(n)]
    A = np.array(cols).T
    w = g.cell_weights.ravel()
    # mean-zero solve: append the weighted-mean constraint as an extra row
    M = np.vstack([A, w])
    rhs = np.concatenate([integrated.ravel() / dt, [0.0]])
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return sol.reshape(g.horizontal_shape)


def test_projection_of_gradient_matches_dense_solve():
    g = build_grid(8, 16, 4)
    th, ph = np.meshgrid(g.theta_centers, g.phi_centers, indexing="ij")
    chi = np.sin(th) * np.cos(th) * np.cos(ph) + 0.5 * np.cos(th)
    grad = op.h_grad(chi, g)
    v_star = VectorField(_lift(grad.theta, g), _lift(grad.phi, g))
    dt, tol = 0.5, 1e-12
    v, phi_s = barotropic_projection(v_star, dt, EllipticWorkspace(g), StepConfig(dt=dt, projection_tol=tol))
    norm = math.sqrt(float(np.sum(v_star.theta**2 + v_star.phi**2)))
    assert math.sqrt(float(np.sum(v.theta**2 + v.phi**2))) <= 10 * tol * norm
    oracle = _dense_projection_oracle(g, op.vertical_velocity(v_star, g)[..., 0], dt)
    np.testing.assert_allclose(phi_s, oracle, rtol=0, atol=1e-10 * np.max(np.abs(oracle)))
    target = chi / dt
    target = target - np.sum(target * g.cell_weights) / np.sum(g.cell_weights)
    np.testing.assert_allclose(phi_s, target, rtol=0, atol=1e-9 * np.max(np.abs(target)))


def test_projection_leaves_constrained_field(grid, rng):
    v = constrained_vector(rng, grid)
    tol = 1e-10
    out, phi_s = barotropic_projection(v, 0.1, EllipticWorkspace(grid), StepConfig(dt=0.1, projection_tol=tol))
    scale = float(np.max(np.abs(v.theta)) + np.max(np.abs(v.phi)))
    assert float(np.max(np.abs(phi_s))) * 0.1 <= 10 * tol * scale
    assert np.max(np.abs(out.theta - v.theta)) <= 10 * tol * scale


def test_projection_ignores_baroclinic_part(grid):
    v = baroclinic_perturbation(grid)
    tol = 1e-10
    out, _ = barotropic_projection(v, 0.1, EllipticWorkspace(grid), StepConfig(dt=0.1, projection_tol=tol))
    assert np.max(np.abs(out.theta - v.theta)) <= tol and np.max(np.abs(out.phi - v.phi)) <= tol


def test_projection_enforces_constraint(grid, rng):
    v = random_vector(rng, grid.shape)
    tol = 1e-10
    ws = EllipticWorkspace(grid)
    out, _ = barotropic_projection(v, 0.01, ws, StepConfig(dt=0.01, projection_tol=tol))
    scale = float(np.max(np.abs(v.theta)) + np.max(np.abs(v.phi)))
    assert op.constraint_residual(out, grid) <= tol * scale
    assert ws.last_iterations <= 3


def test_projection_without_preconditioner_hits_iteration_cap(grid, rng):
    v = random_vector(rng, grid.shape)
    ws = EllipticWorkspace(grid, preconditioner="none")
    with pytest.raises(EllipticDivergence):
        barotropic_projection(v, 0.01, ws, StepConfig(dt=0.01, max_cg_iters=3))
    with pytest.raises(NonFinite):
        barotropic_projection(VectorField(np.full(grid.shape, np.nan), np.zeros(grid.shape)), 0.01, ws, StepConfig(dt=0.01))


def test_spectral_inverse_matches_dense_laplacian():
    g = build_grid(6, 8, 2)
    spec = ZonalSpectrum(g)
    r = np.random.default_rng(0)
    s = r.standard_normal(g.horizontal_shape)
    out = spec.helmholtz_inverse(0.3, s)
    back = out - 0.3 * op.laplace_scalar(out, g)
    np.testing.assert_allclose(back, s, rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# vertical diffusion


def test_constant_column_unchanged_bitwise():
    col = np.full((3, 5, 8), 2.75)
    assert np.array_equal(implicit_vertical_diffusion(col, 0.3, 0.1, op.NEUMANN), col)


@pytest.mark.parametrize("k", [1, 2])
def test_cos_mode_decay_factor(k):
    dt, coeff = 0.05, 0.1
    exact = 1.0 / (1.0 + dt * (k * math.pi) ** 2 * coeff)
    errors = []
    for n in (16, 32, 64):
        xi = (np.arange(n) + 0.5) / n
        col = np.cos(k * math.pi * xi)[None, :]
        out = implicit_vertical_diffusion(col, dt, coeff, op.NEUMANN)
        factor = out / col
        assert np.allclose(factor, factor[0, 0], rtol=1e-11)
        errors.append(abs(factor[0, 0] - exact))
    assert errors[-1] <= 2.0 / 64**2
    assert math.log2(errors[0] / errors[1]) >= 1.9 and math.log2(errors[1] / errors[2]) >= 1.9


def test_robin_top_cell_decreases():
    col = np.ones((1, 8))
    out = implicit_vertical_diffusion(col, 0.1, 0.2, op.robin(1.0))
    assert out[0, -1] < 1.0
    assert np.all(out <= 1.0) and np.all(out > 0)
    assert np.all(np.diff(out[0]) < 0)


def test_vertical_diffusion_maximum_principle():
    r = np.random.default_rng(3)
    col = r.uniform(-1, 1, (50, 8))
    for bc in (op.NEUMANN, op.robin(2.0)):
        out = implicit_vertical_diffusion(col, 0.2, 0.5, bc)
        assert np.max(np.abs(out)) <= np.max(np.abs(col)) * (1 + 1e-14)


def test_vertical_diffusion_rejects_bad_input():
    with pytest.raises(SingularSystem):
        implicit_vertical_diffusion(np.ones((2, 1)), 0.1, 1.0, op.NEUMANN)
    with pytest.raises(SingularSystem):
        implicit_vertical_diffusion(np.ones((2, 4)), -0.1, 1.0, op.NEUMANN)


# ---------------------------------------------------------------------------
# Coriolis rotation and stability bound


def test_coriolis_rotation_preserves_speed(grid, rng, params):
    v = random_vector(rng, grid.shape)
    out = rotate_coriolis(v, 0.37, params, grid)
    np.testing.assert_allclose(out.magnitude(), v.magnitude(), rtol=1e-14)
    back = rotate_coriolis(out, -0.37, params, grid)
    np.testing.assert_allclose(back.theta, v.theta, atol=1e-14)


def _brute_force_bound(state, g, params, cfg):
    best = math.inf
    W = op.vertical_velocity(state.v, g)
    for i in range(g.n_theta):
        h = min(g.d_theta, math.sin(g.theta_centers[i]) * g.d_phi)
        for j in range(g.n_phi):
            for k in range(g.n_xi):
                speed = math.hypot(state.v.theta[i, j, k], state.v.phi[i, j, k])
                if speed > 0:
                    best = min(best, h / speed)
                if cfg.diffusion_mode == "explicit":
                    best = min(best, h * h * min(params.re1, params.rt1, params.rq1) / 4)
                w = max(abs(W[i, j, k]), abs(W[i, j, k + 1]))
                if w > 0:
                    best = min(best, g.d_xi / w)
    return cfg.cfl_safety * best


@pytest.mark.parametrize("mode", ["explicit", "cn"])
def test_cfl_matches_brute_force(small_grid, rng, params, mode):
    g = small_grid
    s = State(constrained_vector(rng, g) * 3.0, np.zeros(g.shape), np.zeros(g.shape))
    cfg = StepConfig(dt=1.0, diffusion_mode=mode)
    got = cfl_dt(s, g, params, cfg)
    oracle = _brute_force_bound(s, g, params, cfg)
    assert got <= oracle * (1 + 1e-14)
    assert got == pytest.approx(oracle, rel=1e-14)


def test_cfl_zero_state(small_grid, params):
    g = small_grid
    s = State.zeros(g)
    explicit = cfl_dt(s, g, params, StepConfig(dt=1.0))
    h = float(np.min(g.effective_spacing()))
    assert explicit == pytest.approx(0.9 * h * h * params.re1 / 4, rel=1e-15)
    assert cfl_dt(s, g, params, StepConfig(dt=1.0, diffusion_mode="cn")) == math.inf


def _scaling(params, coarse, fine):
    diff = [cfl_dt(State.zeros(g), g, params, StepConfig(dt=1.0)) for g in (coarse, fine)]
    adv = []
    for g in (coarse, fine):
        v = VectorField(np.zeros(g.shape), np.ones(g.shape))
        adv.append(cfl_dt(State(v, np.zeros(g.shape), np.zeros(g.shape)), g, params, StepConfig(dt=1.0, diffusion_mode="cn")))
    return diff[1] / diff[0], adv[1] / adv[0]


def test_cfl_resolution_scaling_with_polar_filter(params):
    # a filter band covering a fixed latitude range keeps the spacing proportional to 1/n
    diff, adv = _scaling(params, build_grid(16, 32, 4, 4), build_grid(32, 64, 4, 8))
    assert diff == pytest.approx(0.25, rel=0.1)
    assert adv == pytest.approx(0.5, rel=0.1)


def test_cfl_resolution_scaling_without_filter(params):
    # the zonal spacing of the polar row shrinks like 1/n^2
    diff, adv = _scaling(params, build_grid(16, 32, 4), build_grid(32, 64, 4))
    assert diff == pytest.approx(1 / 16, rel=0.02)
    assert adv == pytest.approx(0.25, rel=0.02)


# ---------------------------------------------------------------------------
# full step


def test_zero_state_returned_bitwise(small_grid, params):
    g = small_grid
    s = State.zeros(g)
    out = step(s, Forcing.zeros(g), params, g, StepConfig(dt=0.001))
    for a in (out.v.theta, out.v.phi, out.T, out.q):
        assert np.all(a == 0.0)
    assert out.t == 0.001


@pytest.mark.parametrize("mode", ["explicit", "cn"])
def test_unforced_step_does_not_increase_energy(grid, params, mode):
    s = random_smooth_state(grid, seed=4)
    f = Forcing.zeros(grid)
    probe = StepConfig(dt=1.0, diffusion_mode=mode)
    dt = cfl_dt(s, grid, params, probe)
    cfg = StepConfig(dt=dt, diffusion_mode=mode)
    ws = EllipticWorkspace(grid)
    e0 = _energy(s, grid)
    for _ in range(5):
        s = step(s, f, params, grid, cfg, ws)
        e1 = _energy(s, grid)
        assert e1 <= e0 * (1 + 1e-10)
        e0 = e1
    assert op.constraint_residual(s.v, grid) <= 10 * cfg.projection_tol * (np.max(np.abs(s.v.theta)) + np.max(np.abs(s.v.phi)))


def test_step_is_deterministic(small_grid, params):
    g = small_grid
    s = random_smooth_state(g, seed=2)
    f = Forcing(np.ones(g.shape) * 0.1, np.zeros(g.shape))
    cfg = StepConfig(dt=0.002)
    a = step(step(s, f, params, g, cfg), f, params, g, cfg)
    b = step(step(s, f, params, g, cfg), f, params, g, cfg)
    for x, y in ((a.v.theta, b.v.theta), (a.v.phi, b.v.phi), (a.T, b.T), (a.q, b.q), (a.phi_s, b.phi_s)):
        assert np.array_equal(x, y)


def test_step_errors(small_grid, params):
    g = small_grid
    s = random_smooth_state(g, seed=1, amplitude=5.0)
    with pytest.raises(CflViolation):
        step(s, Forcing.zeros(g), params, g, StepConfig(dt=10.0))
    bad = State(s.v, np.full(g.shape, np.inf), s.q)
    with pytest.raises(NonFinite) as info:
        step(bad, Forcing.zeros(g), params, g, StepConfig(dt=1e-4, check_cfl=False))
    assert info.value.state is not None


def _run(state, forcing, params, g, dt, t_end):
    cfg = StepConfig(dt=dt, projection_tol=1e-13)
    ws = EllipticWorkspace(g)
    for _ in range(int(round(t_end / dt))):
        state = step(state, forcing, params, g, cfg, ws)
    return state


def test_temporal_self_convergence(small_grid, params):
    g = small_grid
    s0 = random_smooth_state(g, seed=5)
    f = Forcing(np.full(g.shape, 0.5), np.zeros(g.shape))
    dt0, t_end = 0.004, 0.08
    ref = _run(s0, f, params, g, dt0 / 8, t_end)

    def err(s):
        return math.sqrt(sum(float(np.sum((a - b) ** 2)) for a, b in (
            (s.v.theta, ref.v.theta), (s.v.phi, ref.v.phi), (s.T, ref.T), (s.q, ref.q))))

    e1 = err(_run(s0, f, params, g, dt0, t_end))
    e2 = err(_run(s0, f, params, g, dt0 / 2, t_end))
    assert math.log2(e1 / e2) >= 0.9, (e1, e2)
