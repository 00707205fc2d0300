"""Experiment drivers: single runs, the operator identity battery, ensembles and twin runs."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .. import diagnostics as dg
from .. import operators as op
from ..errors import NumericalFailure, ValidationError
from ..geometry import Grid, build_grid
from ..model import Forcing, State, analytic_profile
from ..operators import VectorField
from ..timestepper import EllipticWorkspace, StepConfig, barotropic_projection, cfl_dt, step
from .config import Config
from .initial import baroclinic_perturbation, profile_state, random_smooth_state
from .snapshot import read_snapshot, snapshot_field, write_snapshot

CSV_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# setup


@dataclass
class Setup:
    grid: Grid
    forcing: Forcing
    state: State
    step: StepConfig
    n_steps: int


def make_grid(cfg: Config) -> Grid:
    g = cfg.grid
    return build_grid(g.n_theta, g.n_phi, g.n_xi, g.polar_filter_band)


def make_forcing(cfg: Config, grid: Grid) -> Forcing:
    out = []
    for name, default_field in (("Q1", "T"), ("Q2", "q")):
        table = cfg.forcing[name]
        if table["profile"] == "snapshot":
            values = snapshot_field(table["path"], table.get("field", default_field), grid) * table.get("amplitude", 1.0)
        else:
            values = analytic_profile(table, grid)
        out.append(values)
    return Forcing(out[0], out[1])


def make_initial(cfg: Config, grid: Grid, amplitude: float | None = None) -> State:
    init = cfg.initial
    amp = init["amplitude"] if amplitude is None else amplitude
    kind = init["profile"]
    if kind == "random":
        return random_smooth_state(grid, init["seed"], amp, init.get("l_max", 3), init.get("k_max", 2))
    if kind == "rest":
        return State.zeros(grid)
    if kind == "profile":
        return profile_state(init, grid)
    state, _ = read_snapshot(init["path"])
    if state.T.shape != grid.shape:
        raise ValidationError("initial.path", f"snapshot grid {state.T.shape} does not match {grid.shape}")
    v = state.v
    if op.constraint_residual(v, grid) > cfg.step.projection_tol * float(np.max(v.magnitude()) + 1e-300):
        v, _ = barotropic_projection(v, 1.0, EllipticWorkspace(grid), _step_config(cfg, 1.0))
    return State(v, state.T, state.q, 0.0)


def _step_config(cfg: Config, dt: float) -> StepConfig:
    s = cfg.step
    return StepConfig(
        dt=dt,
        diffusion_mode=s.diffusion_mode,
        projection_tol=s.projection_tol,
        max_cg_iters=s.max_cg_iters,
        cfl_safety=s.cfl_safety,
    )


def stable_dt(cfg: Config, grid: Grid, state: State) -> float:
    """The configured step, or the stability bound of ``state`` for ``dt = "auto"``."""
    if cfg.step.dt != "auto":
        return float(cfg.step.dt)
    bound = cfl_dt(state, grid, cfg.params, _step_config(cfg, 1.0))
    if math.isinf(bound):
        # nothing moves and diffusion is implicit: fall back to a grid-scale step
        bound = 0.1 * float(np.min(grid.effective_spacing()))
    return bound


def build_setup(cfg: Config, amplitude: float | None = None, dt: float | None = None) -> Setup:
    grid = make_grid(cfg)
    forcing = make_forcing(cfg, grid)
    state = make_initial(cfg, grid, amplitude)
    if dt is None:
        dt = stable_dt(cfg, grid, state)
    t_end = cfg.run.t_end
    n_steps = 0 if t_end == 0 else int(math.ceil(t_end / dt * (1.0 - 1e-12)))
    if n_steps:
        dt = t_end / n_steps
    return Setup(grid, forcing, state, _step_config(cfg, dt), n_steps)


# ---------------------------------------------------------------------------
# output


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema_version={CSV_SCHEMA_VERSION}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(float(x)) for x in row])


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    rows = [[float(x) for x in row] for row in reader]
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


def records_from_csv(path) -> list[dg.DiagRecord]:
    header, data = read_csv(path)
    return [dg.DiagRecord(**dict(zip(header, row))) for row in data]


# ---------------------------------------------------------------------------
# single run


@dataclass
class RunResult:
    status: int
    records: list
    final: State
    error: str = ""


def integrate(cfg: Config, setup: Setup, out_dir: str | None = None) -> RunResult:
    """Step from t = 0 to t_end, recording diagnostics (and snapshots when out_dir is set)."""
    grid, params, forcing = setup.grid, cfg.params, setup.forcing
    ws = EllipticWorkspace(grid)
    every = cfg.run.output_every
    snap_every = cfg.run.snapshot_every
    snap_dir = None
    if out_dir is not None:
        snap_dir = os.path.join(out_dir, "snapshots")
        os.makedirs(snap_dir, exist_ok=True)

    def snapshot(state, tag):
        if snap_dir is not None:
            write_snapshot(os.path.join(snap_dir, f"snap_{tag}.bin"), state, grid, params)

    state = setup.state
    records = [dg.diag_record(state, forcing, params, grid)]
    if snap_every:
        snapshot(state, f"{0:07d}")
    status, error = 0, ""
    for n in range(1, setup.n_steps + 1):
        previous = state
        try:
            state = step(state, forcing, params, grid, setup.step, ws)
        except NumericalFailure as exc:
            failed = getattr(exc, "state", None)
            snapshot(failed if failed is not None else previous, "failed")
            status, error = 2, f"{type(exc).__name__}: {exc}"
            state = previous
            break
        if n % every == 0 or n == setup.n_steps:
            records.append(dg.diag_record(state, forcing, params, grid, previous))
        if snap_every and n % snap_every == 0:
            snapshot(state, f"{n:07d}")
    if status == 0 and (not snap_every or setup.n_steps % snap_every):
        snapshot(state, f"{setup.n_steps:07d}")
    if out_dir is not None:
        write_csv(os.path.join(out_dir, "diagnostics.csv"), dg.DiagRecord.columns(), [r.values() for r in records])
    return RunResult(status, records, state, error)


def run_simulation(cfg: Config, out_dir: str | None = None) -> RunResult:
    """Run one configuration, writing diagnostics.csv and snapshots under ``out_dir``."""
    out_dir = cfg.run.out_dir if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    return integrate(cfg, build_setup(cfg), out_dir)


# ---------------------------------------------------------------------------
# identity battery


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    residual: float
    threshold: float

    @property
    def ok(self) -> bool:
        return self.residual <= self.threshold


@dataclass(frozen=True)
class VerifyReport:
    dims: tuple
    seed: int
    draws: int
    checks: tuple

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def text(self) -> str:
        lines = [f"identity battery: grid {self.dims[0]}x{self.dims[1]}x{self.dims[2]}, seed {self.seed}, {self.draws} draws"]
        for c in self.checks:
            lines.append(f"  {c.name:<30s} {c.residual:.3e}  (<= {c.threshold:.0e})  {'ok' if c.ok else 'FAIL'}")
        lines.append("PASS" if self.ok else "FAIL")
        return "\n".join(lines)


def _norm(a, w) -> float:
    if isinstance(a, VectorField):
        return math.sqrt(float(np.sum((a.theta**2 + a.phi**2) * w)))
    return math.sqrt(float(np.sum(a * a * w)))


def _inner(a, b, w) -> float:
    if isinstance(a, VectorField):
        return float(np.sum((a.theta * b.theta + a.phi * b.phi) * w))
    return float(np.sum(a * b * w))


def identity_residuals(rng, grid: Grid, params) -> dict:
    """Relative residual of each discrete integration-by-parts identity for one random draw."""
    shape = grid.shape
    w2 = grid.cell_weights[:, :, None]
    w3 = w2 * grid.level_weights[None, None, :]

    def field():
        return rng.standard_normal(shape)

    def vector():
        return VectorField(field(), field())

    out = {}
    s, u = field(), vector()
    div_u, grad_s = op.h_div(u, grid), op.h_grad(s, grid)
    a, b = _inner(s, div_u, w2), _inner(grad_s, u, w2)
    out["div/grad adjoint"] = abs(a + b) / (_norm(s, w2) * _norm(div_u, w2) + _norm(grad_s, w2) * _norm(u, w2))
    out["divergence integral"] = abs(float(np.sum(div_u * w2))) / float(np.sum(np.abs(div_u) * w2))

    u1 = vector()
    lap = op.laplace_vector(u, grid)
    ct, cp = op.covariant_derivatives(u, grid)
    ct1, cp1 = op.covariant_derivatives(u1, grid)
    lhs = -_inner(lap, u1, w3)
    rhs = _inner(ct, ct1, w3) + _inner(cp, cp1, w3) + _inner(u, u1, w3)
    scale = _norm(lap, w3) * _norm(u1, w3) + _norm(ct, w3) * _norm(ct1, w3) + _norm(cp, w3) * _norm(cp1, w3) + _norm(u, w3) * _norm(u1, w3)
    out["vector laplacian identity"] = abs(lhs - rhs) / scale

    h, v = field(), vector()
    adv = op.advect_scalar(v, h, grid)
    flux = h * op.h_div(v, grid)
    out["transport integral"] = abs(float(np.sum((adv + flux) * w3))) / float(np.sum((np.abs(adv) + np.abs(flux)) * w3))

    vc, _ = barotropic_projection(vector(), 1.0, EllipticWorkspace(grid), StepConfig(dt=1.0, projection_tol=1e-14))
    W = op.vertical_velocity(vc, grid)
    for label, target in (("momentum", vc), ("temperature", field()), ("moisture", field())):
        adv = op.full_advect(vc, target, grid, W=W, tol=1e-12)
        out[f"{label} advection neutral"] = abs(_inner(adv, target, w3)) / (_norm(adv, w3) * _norm(target, w3))

    T, q = field(), 0.1 * field()
    pgf = op.pressure_gradient_force(T, q, params, grid)
    buoy = op.buoyancy(q, W, params, grid)
    a, b = _inner(pgf, vc, w3), _inner(buoy, T, w3)
    out["pressure/buoyancy duality"] = abs(a - b) / (_norm(pgf, w3) * _norm(vc, w3) + _norm(buoy, w3) * _norm(T, w3))
    return out


def verify_operators(seed: int = 0, dims=(16, 32, 8), draws: int = 100, threshold: float = 1e-12) -> VerifyReport:
    from ..geometry import Params

    grid = build_grid(*dims)
    params = Params()
    rng = np.random.default_rng(seed)
    worst: dict = {}
    for _ in range(draws):
        for name, value in identity_residuals(rng, grid, params).items():
            worst[name] = max(worst.get(name, 0.0), value)
    checks = tuple(IdentityCheck(name, value, threshold) for name, value in worst.items())
    return VerifyReport(tuple(dims), seed, draws, checks)


# ---------------------------------------------------------------------------
# ensembles


def _member(args):
    cfg, amplitude, dt, out_dir = args
    setup = build_setup(cfg, amplitude=amplitude, dt=dt)
    result = integrate(cfg, setup, out_dir)
    if result.status:
        raise NumericalFailure(result.error)
    return result.records


def common_dt(cfg: Config, amplitudes) -> float:
    """Smallest stable step across members that differ only in initial amplitude."""
    grid = make_grid(cfg)
    return min(stable_dt(cfg, grid, make_initial(cfg, grid, a)) for a in amplitudes)


def _map_members(jobs, workers: int):
    if workers <= 1:
        return [_member(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_member, jobs))


@dataclass
class EnsembleResult:
    report: dg.AbsorbReport
    series: list
    dt: float


def run_ensemble(cfg: Config, member_count: int, ic_scales, out_dir: str | None = None, workers: int = 1) -> EnsembleResult:
    """Members share forcing and seed and differ in initial amplitude; ordered by index."""
    if member_count < 2:
        raise dg.InsufficientMembers(f"need at least 2 members, got {member_count}")
    scales = [float(s) for s in ic_scales]
    if len(scales) != member_count:
        raise ValidationError("scales", f"expected {member_count} values, got {len(scales)}")
    if any(s < 0 or not math.isfinite(s) for s in scales):
        raise ValidationError("scales", "must be finite and >= 0")
    base = cfg.initial["amplitude"]
    amplitudes = [base * s for s in scales]
    dt = common_dt(cfg, amplitudes)
    jobs = []
    for i, amp in enumerate(amplitudes):
        member_dir = None
        if out_dir is not None:
            member_dir = os.path.join(out_dir, f"member_{i:03d}")
            os.makedirs(member_dir, exist_ok=True)
        jobs.append((cfg, amp, dt, member_dir))
    series = _map_members(jobs, workers)
    t_end = cfg.run.t_end
    report = dg.absorbing_stats(series, t_transient=2.0 * t_end / 3.0)
    if out_dir is not None:
        rows = [[i, scales[i], report.late_sup[i], report.entry_times[i]] for i in range(member_count)]
        with open(os.path.join(out_dir, "ensemble.csv"), "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# schema_version={CSV_SCHEMA_VERSION}\n")
            fh.write(f"# rho_hat={report.rho_hat!r} spread={report.spread!r} dt={dt!r}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["member", "scale", "late_sup", "entry_time"])
            writer.writerows([[r[0]] + [repr(float(x)) for x in r[1:]] for r in rows])
    return EnsembleResult(report, series, dt)


# ---------------------------------------------------------------------------
# twin runs


def run_twin(cfg: Config, epsilon: float, out_dir: str | None = None, dt: float | None = None) -> dg.TwinSeries:
    """Base run and a run whose initial velocity is offset by epsilon times a fixed shape."""
    if not (epsilon >= 0 and math.isfinite(epsilon)):
        raise ValidationError("epsilon", "must be finite and >= 0")
    setup = build_setup(cfg, dt=dt)
    grid, params, forcing = setup.grid, cfg.params, setup.forcing
    shape = baroclinic_perturbation(grid)
    base = setup.state
    pert = State(base.v + shape * epsilon, base.T, base.q, base.t)
    ws = EllipticWorkspace(grid)
    every = cfg.run.output_every
    parts = [dg.twin_separation([base], [pert], grid)]
    a, b = base, pert
    for n in range(1, setup.n_steps + 1):
        a = step(a, forcing, params, grid, setup.step, ws)
        b = step(b, forcing, params, grid, setup.step, ws)
        if n % every == 0 or n == setup.n_steps:
            parts.append(dg.twin_separation([a], [b], grid))
    twin = dg.TwinSeries(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("t", "sep", "K", "K_v", "K_T", "K_q")))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        cols = ["t", "sep", "K", "K_v", "K_T", "K_q"]
        rows = np.column_stack([twin.t, twin.sep, twin.K, twin.K_v, twin.K_T, twin.K_q])
        write_csv(os.path.join(out_dir, "twin.csv"), cols, rows)
    return twin


def with_overrides(cfg: Config, **sections) -> Config:
    """Copy of ``cfg`` with whole sections replaced (dataclass sections accept field overrides)."""
    out = cfg
    for name, value in sections.items():
        current = getattr(cfg, name)
        if isinstance(value, dict) and not isinstance(current, dict):
            value = replace(current, **value)
        out = replace(out, **{name: value})
    return out
