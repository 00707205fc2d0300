import math
import os

import numpy as np
import pytest

from moistpe import diagnostics as dg
from moistpe.errors import InsufficientMembers, ParseError, SnapshotError, ValidationError
from moistpe.geometry import Params, build_grid
from moistpe.harness import drivers
from moistpe.harness.cli import main
from moistpe.harness.config import Config, config_from_dict, load_config, parse_config, render_config
from moistpe.harness.initial import baroclinic_perturbation, random_smooth_state
from moistpe.harness.snapshot import read_snapshot, snapshot_field, write_snapshot
from moistpe.model import State
from moistpe.operators import constraint_residual

SMALL = """
[grid]
n_theta = 8
n_phi = 16
n_xi = 4

[step]
dt = 0.002

[run]
t_end = 0.01
output_every = 1
snapshot_every = 2

[initial]
profile = "random"
seed = 3

[forcing.Q1]
profile = "harmonic"
amplitude = 0.5
l = 2
m = 1
"""


def _write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ---------------------------------------------------------------------------
# configuration


def test_minimal_config_has_defaults():
    cfg = parse_config("[grid]\nn_theta = 8\nn_phi = 16\nn_xi = 4\n")
    assert (cfg.grid.n_theta, cfg.grid.n_phi, cfg.grid.n_xi) == (8, 16, 4)
    assert cfg.params == Params() and cfg.params.a == 0.618
    assert cfg.step.dt == "auto" and cfg.step.diffusion_mode == "explicit"
    assert cfg.forcing["Q1"]["profile"] == "zero" and cfg.initial["profile"] == "random"
    assert parse_config("") == Config()


@pytest.mark.parametrize(
    "text, key",
    [
        ("[params]\np0 = 0\n", "params.p0"),
        ("[params]\np0 = 2000.0\n", "params.p0"),
        ("[params]\nre1 = -1.0\n", "params.re1"),
        ("[grid]\nn_phi = 7\n", "grid.n_phi"),
        ("[grid]\ncolour = 1\n", "grid.colour"),
        ("[step]\ndt = -0.1\n", "step.dt"),
        ("[step]\ncfl_safety = 2.0\n", "step.cfl_safety"),
        ("[forcing.Q1]\nprofile = \"tophat\"\n", "forcing.Q1.profile"),
        ("[initial]\nprofile = \"snapshot\"\n", "initial.path"),
        ("[output]\nx = 1\n", "output"),
        ("[run]\nt_end = \"long\"\n", "run.t_end"),
    ],
)
def test_validation_errors_name_the_key(text, key):
    with pytest.raises(ValidationError) as info:
        parse_config(text)
    assert info.value.key == key


def test_parse_error_reports_line():
    with pytest.raises(ParseError) as info:
        parse_config("[grid]\nn_theta = 8\nn_phi = = 3\n")
    assert info.value.line == 3


def test_render_round_trip(tmp_path):
    cfg = load_config(_write(tmp_path, SMALL))
    again = parse_config(render_config(cfg))
    assert again == cfg
    assert parse_config(render_config(Config())) == Config()
    nested = config_from_dict({"initial": {"profile": "profile", "T": {"profile": "constant", "amplitude": 2.0}}})
    assert parse_config(render_config(nested)) == nested


# ---------------------------------------------------------------------------
# snapshots


def test_snapshot_round_trip_bitwise(tmp_path, small_grid):
    s = random_smooth_state(small_grid, seed=2)
    s = State(s.v, s.T * math.pi, s.q / 3.0, t=0.1 + 0.2)
    path = tmp_path / "s.bin"
    write_snapshot(path, s, small_grid, Params())
    back, header = read_snapshot(path)
    for a, b in ((s.v.theta, back.v.theta), (s.v.phi, back.v.phi), (s.T, back.T), (s.q, back.q)):
        assert np.array_equal(a, b)
    assert back.t == s.t
    assert float.fromhex(header["params.a"]) == 0.618
    assert np.array_equal(snapshot_field(path, "T", small_grid), s.T)
    raw = path.read_bytes()
    body = raw[raw.index(b"END\n") + 4:]
    assert len(body) == 4 * 8 * 16 * 4 * 8
    assert np.array_equal(np.frombuffer(body, "<f8")[: s.v.theta.size].reshape(small_grid.shape), s.v.theta)


def test_snapshot_rejects_corrupt_files(tmp_path, small_grid):
    path = tmp_path / "s.bin"
    write_snapshot(path, State.zeros(small_grid), small_grid)
    raw = path.read_bytes()
    cases = {
        "truncated": raw[:-8],
        "magic": b"NOT" + raw[3:],
        "no_end": raw[:20],
        "version": raw.replace(b"SNAPSHOT 1", b"SNAPSHOT 9", 1),
    }
    for name, data in cases.items():
        bad = tmp_path / f"{name}.bin"
        bad.write_bytes(data)
        with pytest.raises(SnapshotError):
            read_snapshot(bad)
    with pytest.raises(SnapshotError):
        snapshot_field(path, "T", build_grid(4, 8, 2))
    with pytest.raises(SnapshotError):
        snapshot_field(path, "rho", small_grid)
    assert not list(tmp_path.glob("*.tmp"))


# ---------------------------------------------------------------------------
# runs


def test_zero_length_run(tmp_path):
    cfg = parse_config(SMALL.replace("t_end = 0.01", "t_end = 0.0"))
    out = tmp_path / "out"
    res = drivers.run_simulation(cfg, str(out))
    assert res.status == 0 and len(res.records) == 1
    header, data = drivers.read_csv(out / "diagnostics.csv")
    assert header == dg.DiagRecord.columns() and data.shape == (1, len(header))
    assert len(list((out / "snapshots").glob("*.bin"))) == 1


def test_run_is_deterministic(tmp_path):
    cfg = parse_config(SMALL)
    a = drivers.run_simulation(cfg, str(tmp_path / "a"))
    b = drivers.run_simulation(cfg, str(tmp_path / "b"))
    assert a.status == b.status == 0 and len(a.records) == 6
    assert (tmp_path / "a" / "diagnostics.csv").read_bytes() == (tmp_path / "b" / "diagnostics.csv").read_bytes()
    snaps = sorted(p.name for p in (tmp_path / "a" / "snapshots").glob("*.bin"))
    assert snaps == ["snap_0000000.bin", "snap_0000002.bin", "snap_0000004.bin", "snap_0000005.bin"]
    final, _ = read_snapshot(tmp_path / "a" / "snapshots" / "snap_0000005.bin")
    assert np.array_equal(final.T, a.final.T)
    recs = drivers.records_from_csv(tmp_path / "a" / "diagnostics.csv")
    assert [r.values() for r in recs] == [r.values() for r in a.records]


def test_run_restarts_from_snapshot(tmp_path):
    cfg = parse_config(SMALL)
    drivers.run_simulation(cfg, str(tmp_path / "a"))
    snap = tmp_path / "a" / "snapshots" / "snap_0000005.bin"
    text = SMALL.replace('profile = "random"\nseed = 3', f'profile = "snapshot"\npath = "{snap}"')
    text += f'\n[forcing.Q2]\nprofile = "snapshot"\npath = "{snap}"\nfield = "q"\namplitude = 0.0\n'
    cfg2 = parse_config(text)
    setup = drivers.build_setup(cfg2)
    final, _ = read_snapshot(snap)
    assert np.array_equal(setup.state.T, final.T)
    assert np.all(setup.forcing.Q2 == 0)
    assert drivers.run_simulation(cfg2, str(tmp_path / "b")).status == 0


def test_numerical_failure_writes_snapshot(tmp_path):
    cfg = parse_config(SMALL.replace("dt = 0.002", "dt = 1.0").replace("t_end = 0.01", "t_end = 2.0"))
    res = drivers.run_simulation(cfg, str(tmp_path))
    assert res.status == 2 and "CflViolation" in res.error
    assert (tmp_path / "snapshots" / "snap_failed.bin").exists()
    assert len(res.records) == 1


# ---------------------------------------------------------------------------
# identity battery, ensembles and twins


def test_verify_operators_degenerate_grid():
    a = drivers.verify_operators(seed=1, dims=(4, 4, 2), draws=20)
    b = drivers.verify_operators(seed=1, dims=(4, 4, 2), draws=20)
    assert a.ok and a.text() == b.text()
    assert len(a.checks) == 8


def test_ensemble_member_count_and_identical_members(tmp_path):
    cfg = parse_config(SMALL)
    with pytest.raises(InsufficientMembers):
        drivers.run_ensemble(cfg, 1, [1.0])
    with pytest.raises(ValidationError):
        drivers.run_ensemble(cfg, 2, [1.0])
    res = drivers.run_ensemble(cfg, 3, [1.0, 1.0, 1.0], str(tmp_path))
    assert abs(res.report.spread - 1.0) <= 1e-12
    assert (tmp_path / "ensemble.csv").exists() and (tmp_path / "member_002" / "diagnostics.csv").exists()


def test_twin_zero_epsilon_and_initial_separation(tmp_path):
    cfg = parse_config(SMALL.replace('profile = "random"\nseed = 3', 'profile = "rest"'))
    grid = drivers.make_grid(cfg)
    zero = drivers.run_twin(cfg, 0.0)
    assert np.all(zero.sep == 0)
    eps = 1e-3
    tw = drivers.run_twin(cfg, eps, str(tmp_path))
    shape = baroclinic_perturbation(grid)
    expected = eps**2 * dg.lp_norm(shape, 2, grid) ** 2
    assert tw.sep[0] == pytest.approx(expected, rel=1e-13)
    assert constraint_residual(shape, grid) <= 1e-15
    header, data = drivers.read_csv(tmp_path / "twin.csv")
    assert header == ["t", "sep", "K", "K_v", "K_T", "K_q"] and data.shape[0] == len(tw.t)
    with pytest.raises(ValidationError):
        drivers.run_twin(cfg, -1.0)


# ---------------------------------------------------------------------------
# command line


def test_cli_exit_codes(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert main(["verify-ops", "--grid", "4,4,2", "--draws", "5"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) >= 8
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 3
    assert main(["run", "--config", _write(tmp_path, "[params]\np0 = 0\n", "bad.toml")]) == 1
    assert main(["run", "--config", _write(tmp_path, "[grid\n", "broken.toml")]) == 1
    assert main(["verify-ops", "--grid", "4,4"]) == 1
    assert main(["frobnicate"]) == 1
    failing = _write(tmp_path, SMALL.replace("dt = 0.002", "dt = 1.0").replace("t_end = 0.01", "t_end = 2.0"), "fail.toml")
    assert main(["run", "--config", failing, "--out", str(tmp_path / "f")]) == 2
    assert main(["twin", "--config", cfg, "--epsilon", "1e-4", "--out", str(tmp_path / "t")]) == 0
    assert main(["ensemble", "--config", cfg, "--members", "2", "--scales", "1,2", "--out", str(tmp_path / "e")]) == 0
    assert main(["ensemble", "--config", cfg, "--members", "1", "--scales", "1"]) == 1
