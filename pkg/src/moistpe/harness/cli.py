"""Command-line entry point.

Exit status: 0 success, 1 parse or validation error, 2 numerical failure,
3 I/O error.
"""
from __future__ import annotations

import argparse
import os
import sys

from ..errors import ConstraintViolated, MoistPEError, NumericalFailure, SnapshotError
from . import drivers
from .config import load_config

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _dims(text: str) -> tuple:
    try:
        dims = tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected T,P,X integers, got {text!r}") from exc
    if len(dims) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got {text!r}")
    return dims


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moistpe", description="Moist primitive-equation solver on the spherical shell.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="integrate one configuration")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None, help="output directory (defaults to run.out_dir)")

    ver = sub.add_parser("verify-ops", help="run the discrete identity battery")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--grid", type=_dims, default=(16, 32, 8), help="T,P,X")
    ver.add_argument("--draws", type=int, default=100)

    ens = sub.add_parser("ensemble", help="ensemble over initial amplitudes")
    ens.add_argument("--config", required=True)
    ens.add_argument("--members", type=int, required=True)
    ens.add_argument("--scales", type=_floats, required=True)
    ens.add_argument("--workers", type=int, default=1)
    ens.add_argument("--out", default=None)

    twin = sub.add_parser("twin", help="base and perturbed twin runs")
    twin.add_argument("--config", required=True)
    twin.add_argument("--epsilon", type=float, required=True)
    twin.add_argument("--out", default=None)
    return parser


def _dispatch(args) -> int:
    if args.command == "verify-ops":
        report = drivers.verify_operators(args.seed, args.grid, args.draws)
        print(report.text())
        return EXIT_OK if report.ok else EXIT_NUMERICAL

    cfg = load_config(args.config)
    out = args.out or cfg.run.out_dir
    if args.command == "run":
        result = drivers.run_simulation(cfg, out)
        if result.status:
            print(result.error, file=sys.stderr)
        else:
            print(f"completed {len(result.records)} records to t = {result.final.t:.6g} in {out}")
        return result.status
    if args.command == "ensemble":
        os.makedirs(out, exist_ok=True)
        res = drivers.run_ensemble(cfg, args.members, args.scales, out, args.workers)
        r = res.report
        print(f"rho_hat = {r.rho_hat:.6g}  spread = {r.spread:.6g}")
        for i, (sup, entry) in enumerate(zip(r.late_sup, r.entry_times)):
            print(f"  member {i}: late sup {sup:.6g}, entry time {entry:.6g}")
        return EXIT_OK
    twin = drivers.run_twin(cfg, args.epsilon, out)
    print(f"sep(0) = {twin.sep[0]:.6e}  sep(end) = {twin.sep[-1]:.6e}  max K = {twin.K.max():.6e}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return _dispatch(args)
    except (NumericalFailure, ConstraintViolated) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SnapshotError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MoistPEError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
