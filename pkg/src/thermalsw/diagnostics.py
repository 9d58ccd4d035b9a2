"""Error norms, convergence rates, and the run output files.

The per-step diagnostics CSV has the fixed header

    step,time,mass,total_S,energy,tracer_variance,vorticity,newton_iters

and is flushed after every row. Snapshot files are plain text with a
single self-describing header line ``nx ny level space time`` followed
by row-major values (one mesh row per line).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import MeshHierarchy, MeshLevel
from .spaces import SpaceKind

CSV_HEADER = "step,time,mass,total_S,energy,tracer_variance,vorticity,newton_iters"


@dataclass
class DiagnosticsRecord:
    step: int
    time: float
    mass: float
    total_S: float
    energy: float
    tracer_variance: float
    vorticity: float
    newton_iters: int

    def csv_row(self) -> str:
        return ",".join([
            str(self.step), f"{self.time:.17g}", f"{self.mass:.17g}",
            f"{self.total_S:.17g}", f"{self.energy:.17g}",
            f"{self.tracer_variance:.17g}", f"{self.vorticity:.17g}",
            str(self.newton_iters),
        ])


class CsvWriter:
    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")
        self._fh.write(CSV_HEADER + "\n")
        self._fh.flush()

    def write(self, rec: DiagnosticsRecord) -> None:
        self._fh.write(rec.csv_row() + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def write_snapshot(path: Path, values: np.ndarray, nx: int, ny: int,
                   level: int, space: SpaceKind, time: float) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = np.asarray(values, dtype=float).reshape(ny, nx)
    with open(path, "w") as fh:
        fh.write(f"{nx} {ny} {level} {space.value} {time:.17g}\n")
        np.savetxt(fh, grid, fmt="%.17g")


def read_snapshot(path: Path):
    with open(path) as fh:
        header = fh.readline().split()
        nx, ny, level = int(header[0]), int(header[1]), int(header[2])
        space, time = header[3], float(header[4])
        grid = np.loadtxt(fh).reshape(ny, nx)
    return grid, {"nx": nx, "ny": ny, "level": level, "space": space, "time": time}


# ---------------------------------------------------------------------------
# error norms (discrete fields against same-space references)
# ---------------------------------------------------------------------------

def l2_error_cells(level: MeshLevel, field: np.ndarray, reference: np.ndarray) -> float:
    d = field - reference
    return math.sqrt(float(level.cell_areas @ (d * d)))


def l2_error_edges(level: MeshLevel, m1, field: np.ndarray, reference: np.ndarray) -> float:
    d = field - reference
    return math.sqrt(float(d @ (m1 @ d)))


def l2_error_collocated(hierarchy: MeshHierarchy, dofmap, field: np.ndarray,
                        reference: np.ndarray) -> float:
    areas = hierarchy.fine.cell_areas[dofmap.w2h_to_fine]
    d = field - reference
    return math.sqrt(float(areas @ (d * d)))


def observed_order(errors, spacings) -> float:
    """Least-squares slope of log(error) against log(spacing).

    Returns ``inf`` for exactly reproduced solutions (zero error).
    """
    errors = np.asarray(errors, dtype=float)
    spacings = np.asarray(spacings, dtype=float)
    if len(errors) < 2:
        raise ValueError("need at least two points to estimate an order")
    if np.any(errors == 0):
        return math.inf
    if np.any(errors < 0) or np.any(spacings <= 0):
        raise ValueError("errors must be positive and spacings strictly positive")
    return float(np.polyfit(np.log(spacings), np.log(errors), 1)[0])
