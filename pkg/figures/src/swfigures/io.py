"""Readers for the run outputs: diagnostics CSV, convergence tables, snapshots.

These parse the documented file formats only; no solver code is imported.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

DIAGNOSTICS_COLUMNS = ("step", "time", "mass", "total_S", "energy",
                       "tracer_variance", "vorticity", "newton_iters")


class SchemaError(ValueError):
    """An input file does not match its documented layout."""


def read_timeseries(path) -> dict:
    """Load a diagnostics CSV with the fixed eight-column header."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip()
    cols = tuple(header.split(","))
    if cols != DIAGNOSTICS_COLUMNS:
        raise SchemaError(
            f"{path}: expected columns {','.join(DIAGNOSTICS_COLUMNS)}, got {header!r}")
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.size == 0:
        raise SchemaError(f"{path}: no data rows")
    data = np.atleast_1d(data)
    return {name: np.asarray(data[name], dtype=float) for name in DIAGNOSTICS_COLUMNS}


def read_convergence(path) -> dict:
    """Load a convergence table: header line, then one row per resolution."""
    path = Path(path)
    with open(path) as fh:
        names = fh.readline().strip().split(",")
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    if "dx" not in names:
        raise SchemaError(f"{path}: convergence table needs a 'dx' column")
    if rows.shape[0] < 2:
        raise SchemaError(f"{path}: need at least two resolutions, got {rows.shape[0]}")
    return {name: rows[:, k] for k, name in enumerate(names)}


def read_snapshot(path):
    """Load a field snapshot: 'nx ny level space time' header, row-major grid."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: snapshot file not found")
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) < 5:
            raise SchemaError(f"{path}: malformed snapshot header {header!r}")
        try:
            nx, ny, level = int(header[0]), int(header[1]), int(header[2])
            time = float(header[4])
        except ValueError as err:
            raise SchemaError(f"{path}: malformed snapshot header {header!r}") from err
        grid = np.loadtxt(fh)
    if grid.size != nx * ny:
        raise SchemaError(f"{path}: expected {nx * ny} values, got {grid.size}")
    return grid.reshape(ny, nx), {"nx": nx, "ny": ny, "level": level,
                                  "space": header[3], "time": time}


def fit_order(dx, err) -> float:
    """Least-squares slope of log(err) against log(dx).

    Matches the solver's own convergence fit so annotations agree exactly.
    """
    dx = np.asarray(dx, dtype=float)
    err = np.asarray(err, dtype=float)
    if np.any(err <= 0):
        raise SchemaError("convergence errors must be strictly positive")
    return float(np.polyfit(np.log(dx), np.log(err), 1)[0])
