"""Bit-exact state snapshots: a text header followed by raw little-endian float64.

Header lines are ``key=value``; the first line is the magic string and the
header ends with a line reading ``END``.  The payload holds v_theta, v_phi, T
and q in that order, each row-major with colatitude slowest and level fastest.
"""
from __future__ import annotations

import os
from dataclasses import fields

import numpy as np

from ..errors import SnapshotError
from ..geometry import Grid, Params
from ..model import State
from ..operators import VectorField

MAGIC = "MOISTPE-SNAPSHOT"
SCHEMA_VERSION = 1
FIELD_ORDER = ("v_theta", "v_phi", "T", "q")
_DTYPE = np.dtype("<f8")


def write_snapshot(path, state: State, grid: Grid, params: Params | None = None) -> None:
    header = [
        f"{MAGIC} {SCHEMA_VERSION}",
        f"n_theta={grid.n_theta}",
        f"n_phi={grid.n_phi}",
        f"n_xi={grid.n_xi}",
        f"t={float(state.t).hex()}",
        f"fields={','.join(FIELD_ORDER)}",
        "dtype=<f8",
    ]
    if params is not None:
        header += [f"params.{f.name}={float(getattr(params, f.name)).hex()}" for f in fields(params)]
    header.append("END")
    arrays = (state.v.theta, state.v.phi, state.T, state.q)
    payload = np.concatenate([np.ascontiguousarray(a, dtype=_DTYPE).ravel() for a in arrays])
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(payload.tobytes())
    os.replace(tmp, path)


def read_snapshot(path) -> tuple[State, dict]:
    """Return the stored state and the header as a dict of strings."""
    with open(path, "rb") as fh:
        data = fh.read()
    lines = []
    pos = 0
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise SnapshotError(f"{path}: header is not terminated")
        line = data[pos:end].decode("ascii", errors="replace")
        pos = end + 1
        if line == "END":
            break
        lines.append(line)
    if not lines or not lines[0].startswith(MAGIC):
        raise SnapshotError(f"{path}: not a snapshot file")
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError) as exc:
        raise SnapshotError(f"{path}: malformed magic line") from exc
    if version != SCHEMA_VERSION:
        raise SnapshotError(f"{path}: unsupported schema version {version}")
    header = {}
    for line in lines[1:]:
        key, sep, value = line.partition("=")
        if not sep:
            raise SnapshotError(f"{path}: malformed header line {line!r}")
        header[key] = value
    try:
        shape = (int(header["n_theta"]), int(header["n_phi"]), int(header["n_xi"]))
        t = float.fromhex(header["t"])
    except (KeyError, ValueError) as exc:
        raise SnapshotError(f"{path}: incomplete header") from exc
    if header.get("fields") != ",".join(FIELD_ORDER) or header.get("dtype") != "<f8":
        raise SnapshotError(f"{path}: unexpected field layout")
    count = int(np.prod(shape))
    payload = np.frombuffer(data, dtype=_DTYPE, offset=pos)
    if payload.size != 4 * count or (len(data) - pos) % _DTYPE.itemsize:
        raise SnapshotError(f"{path}: payload holds {payload.size} values, expected {4 * count}")
    parts = [payload[k * count:(k + 1) * count].reshape(shape).astype(np.float64) for k in range(4)]
    state = State(VectorField(parts[0], parts[1]), parts[2], parts[3], t)
    return state, header


def snapshot_field(path, name: str, grid: Grid) -> np.ndarray:
    """One stored field by name, checked against ``grid``."""
    state, _ = read_snapshot(path)
    arrays = {"v_theta": state.v.theta, "v_phi": state.v.phi, "T": state.T, "q": state.q}
    if name not in arrays:
        raise SnapshotError(f"unknown snapshot field {name!r}")
    if state.T.shape != grid.shape:
        raise SnapshotError(f"{path}: grid {state.T.shape} does not match {grid.shape}")
    return arrays[name]
