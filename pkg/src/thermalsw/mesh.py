"""Doubly periodic structured quadrilateral mesh hierarchies.

A hierarchy is a nested sequence of tensor-product meshes refined by a
factor of two per level. When the hierarchy is deep enough to carry a
transport mesh (three levels or more), the finest level is partitioned
inside each transport element so that every fine cell contains exactly
one Gauss-Legendre point and has width proportional to that point's
weight; the level in between groups those sub-cells in symmetric pairs,
which makes it uniform again.
"""

from __future__ import annotations

from functools import cached_property
from typing import NamedTuple

import numpy as np


class ConfigError(ValueError):
    """Raised for inconsistent mesh or run configuration."""


class StateError(RuntimeError):
    """Raised when a simulation state becomes unusable (blow-up, h <= 0)."""


def gauss_legendre(n: int):
    """Gauss-Legendre points and weights on [-1, 1].

    Points are the roots of the degree-n Legendre polynomial; weights are
    positive and sum to 2.
    """
    if n < 1:
        raise ConfigError(f"quadrature order must be >= 1, got {n}")
    return np.polynomial.legendre.leggauss(n)


class Edge(NamedTuple):
    minus_cell: int
    plus_cell: int
    orientation: int  # 0: normal along x, 1: normal along y
    length: float


class MeshLevel:
    """One periodic tensor-product mesh level.

    Cells, vertices and edges are indexed row-major: entity (i, j) has id
    ``j * nx + i``. Edge dofs are numbered with all x-normal (vertical)
    edges first, then all y-normal (horizontal) edges. The unit normal of
    an edge points in the direction of increasing coordinate, from the
    minus cell into the plus cell.
    """

    def __init__(self, x_edges: np.ndarray, y_edges: np.ndarray):
        x_edges = np.asarray(x_edges, dtype=float)
        y_edges = np.asarray(y_edges, dtype=float)
        if np.any(np.diff(x_edges) <= 0) or np.any(np.diff(y_edges) <= 0):
            raise ConfigError("mesh partition coordinates must be strictly increasing")
        self.x_edges = x_edges
        self.y_edges = y_edges
        self.nx = len(x_edges) - 1
        self.ny = len(y_edges) - 1
        self.dx = np.diff(x_edges)
        self.dy = np.diff(y_edges)
        self.x0 = x_edges[0]
        self.y0 = y_edges[0]
        self.lx = x_edges[-1] - x_edges[0]
        self.ly = y_edges[-1] - y_edges[0]

    # --- counts ---------------------------------------------------------
    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_vertices(self) -> int:
        return self.nx * self.ny

    @property
    def n_xedges(self) -> int:
        return self.nx * self.ny

    @property
    def n_edges(self) -> int:
        return 2 * self.nx * self.ny

    @property
    def area(self) -> float:
        return self.lx * self.ly

    # --- geometry -------------------------------------------------------
    @cached_property
    def cell_areas(self) -> np.ndarray:
        """Flat (n_cells,) array of cell areas, id = j*nx + i."""
        return np.outer(self.dy, self.dx).ravel()

    @cached_property
    def cell_centers(self) -> np.ndarray:
        xc = 0.5 * (self.x_edges[:-1] + self.x_edges[1:])
        yc = 0.5 * (self.y_edges[:-1] + self.y_edges[1:])
        gx, gy = np.meshgrid(xc, yc)
        return np.column_stack([gx.ravel(), gy.ravel()])

    @cached_property
    def vertex_coords(self) -> np.ndarray:
        gx, gy = np.meshgrid(self.x_edges[:-1], self.y_edges[:-1])
        return np.column_stack([gx.ravel(), gy.ravel()])

    # --- edge topology ----------------------------------------------------
    @cached_property
    def edge_arrays(self):
        """(minus_cell, plus_cell, orientation, length) arrays in dof order."""
        nx, ny = self.nx, self.ny
        i = np.arange(nx)
        j = np.arange(ny)
        ii, jj = np.meshgrid(i, j)  # shape (ny, nx)

        # vertical edges at x_edges[i], row j: minus = column i-1, plus = column i
        xminus = (jj * nx + (ii - 1) % nx).ravel()
        xplus = (jj * nx + ii).ravel()
        xlen = np.repeat(self.dy, nx)

        # horizontal edges at y_edges[j], column i
        yminus = (((jj - 1) % ny) * nx + ii).ravel()
        yplus = (jj * nx + ii).ravel()
        ylen = np.tile(self.dx, ny)

        minus = np.concatenate([xminus, yminus])
        plus = np.concatenate([xplus, yplus])
        orient = np.concatenate([np.zeros(nx * ny, int), np.ones(nx * ny, int)])
        length = np.concatenate([xlen, ylen])
        return minus, plus, orient, length

    def edge(self, k: int) -> Edge:
        minus, plus, orient, length = self.edge_arrays
        return Edge(int(minus[k]), int(plus[k]), int(orient[k]), float(length[k]))

    @cached_property
    def cell_edge_ids(self) -> np.ndarray:
        """(n_cells, 4) global edge ids [left, right, bottom, top] per cell."""
        nx, ny = self.nx, self.ny
        i = np.arange(nx)
        j = np.arange(ny)
        ii, jj = np.meshgrid(i, j)
        left = jj * nx + ii
        right = jj * nx + (ii + 1) % nx
        bottom = nx * ny + jj * nx + ii
        top = nx * ny + ((jj + 1) % ny) * nx + ii
        return np.stack([left, right, bottom, top], axis=-1).reshape(-1, 4)

    @cached_property
    def cell_vertex_ids(self) -> np.ndarray:
        """(n_cells, 4) vertex ids [(i,j), (i+1,j), (i,j+1), (i+1,j+1)]."""
        nx, ny = self.nx, self.ny
        i = np.arange(nx)
        j = np.arange(ny)
        ii, jj = np.meshgrid(i, j)
        v00 = jj * nx + ii
        v10 = jj * nx + (ii + 1) % nx
        v01 = ((jj + 1) % ny) * nx + ii
        v11 = ((jj + 1) % ny) * nx + (ii + 1) % nx
        return np.stack([v00, v10, v01, v11], axis=-1).reshape(-1, 4)

    def wrap(self, pts: np.ndarray) -> np.ndarray:
        """Map physical points into the periodic fundamental domain."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.empty_like(pts)
        out[:, 0] = self.x0 + np.mod(pts[:, 0] - self.x0, self.lx)
        out[:, 1] = self.y0 + np.mod(pts[:, 1] - self.y0, self.ly)
        return out

    def locate(self, pts: np.ndarray):
        """Cell indices (i, j) containing each (wrapped) point."""
        pts = self.wrap(pts)
        i = np.clip(np.searchsorted(self.x_edges, pts[:, 0], side="right") - 1, 0, self.nx - 1)
        j = np.clip(np.searchsorted(self.y_edges, pts[:, 1], side="right") - 1, 0, self.ny - 1)
        return i, j


def facet_quadrature(level: MeshLevel, edge_index: int, n: int = 4):
    """Gauss-Legendre rule mapped onto one edge.

    Returns (points, weights) with points of shape (n, 2) on the edge and
    weights summing to the edge length.
    """
    pts, wts = gauss_legendre(n)
    minus, plus, orient, length = level.edge_arrays
    nxy = level.nx * level.ny
    if edge_index < nxy:
        i, j = edge_index % level.nx, edge_index // level.nx
        x = np.full(n, level.x_edges[i])
        ymid = 0.5 * (level.y_edges[j] + level.y_edges[j + 1])
        y = ymid + 0.5 * level.dy[j] * pts
        w = 0.5 * level.dy[j] * wts
    else:
        k = edge_index - nxy
        i, j = k % level.nx, k // level.nx
        y = np.full(n, level.y_edges[j])
        xmid = 0.5 * (level.x_edges[i] + level.x_edges[i + 1])
        x = xmid + 0.5 * level.dx[i] * pts
        w = 0.5 * level.dx[i] * wts
    return np.column_stack([x, y]), w


class MeshHierarchy:
    """Nested mesh levels, coarsest first.

    ``dg_index`` is the level whose cells coincide with the transport
    elements (None when the hierarchy is too shallow to carry one).
    """

    def __init__(self, levels, dg_index, gl_points, gl_weights):
        self.levels = levels
        self.dg_index = dg_index
        self.gl_points = gl_points
        self.gl_weights = gl_weights

    @property
    def fine(self) -> MeshLevel:
        return self.levels[-1]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def dg(self) -> MeshLevel:
        if self.dg_index is None:
            raise ConfigError("hierarchy has no transport (DG) level; need >= 3 levels")
        return self.levels[self.dg_index]

    @cached_property
    def gl_x(self) -> np.ndarray:
        """x coordinates of the fine-level collocation points (one per fine column)."""
        return self._gl_coords(axis=0)

    @cached_property
    def gl_y(self) -> np.ndarray:
        return self._gl_coords(axis=1)

    def _gl_coords(self, axis):
        dg = self.dg
        edges = dg.x_edges if axis == 0 else dg.y_edges
        mid = 0.5 * (edges[:-1] + edges[1:])
        half = 0.5 * (edges[1:] - edges[:-1])
        # per element: the four GL points mapped from [-1, 1]
        return (mid[:, None] + half[:, None] * self.gl_points[None, :]).ravel()

    def summary(self) -> str:
        lines = [f"hierarchy: {self.n_levels} level(s), dg_index={self.dg_index}"]
        for k, lv in enumerate(self.levels):
            tag = ""
            if k == self.n_levels - 1:
                tag = " (finest)"
            if self.dg_index is not None and k == self.dg_index:
                tag += " (transport elements)"
            uni = np.allclose(lv.dx, lv.dx[0]) and np.allclose(lv.dy, lv.dy[0])
            lines.append(
                f"  level {k}: {lv.nx} x {lv.ny} cells, "
                f"domain [{lv.x0:g}, {lv.x0 + lv.lx:g}) x [{lv.y0:g}, {lv.y0 + lv.ly:g}), "
                f"{'uniform' if uni else 'GL-partitioned'}{tag}"
            )
        return "\n".join(lines)


def _gl_partition(coarse_edges: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Subdivide each interval of ``coarse_edges`` by the GL weight partition."""
    cum = np.cumsum(weights)[:-1] / 2.0  # fractions of the interval, excludes 1
    left = coarse_edges[:-1]
    width = np.diff(coarse_edges)
    interior = left[:, None] + width[:, None] * cum[None, :]
    out = np.empty(len(left) * len(weights) + 1)
    out[:-1] = np.column_stack([left, interior]).ravel()
    out[-1] = coarse_edges[-1]
    return out


def build_hierarchy(extent, fine_cells: int, levels: int = 4,
                    origin=(0.0, 0.0), dg_order: int = 3) -> MeshHierarchy:
    """Build a periodic mesh hierarchy over a rectangle.

    ``extent`` is the domain size (scalar or (lx, ly)); ``fine_cells`` the
    finest-level cell count per dimension. With three or more levels the
    level two below the finest carries the transport elements: each of its
    cells holds 4 x 4 fine cells laid out on the Gauss-Legendre partition.
    """
    if np.isscalar(extent):
        extent = (float(extent), float(extent))
    lx, ly = float(extent[0]), float(extent[1])
    x0, y0 = float(origin[0]), float(origin[1])
    if levels < 1:
        raise ConfigError(f"need at least one level, got levels={levels}")
    if dg_order != 3:
        raise ConfigError(f"only cubic (order 3) transport elements are supported, got {dg_order}")
    if fine_cells % (2 ** (levels - 1)) != 0:
        raise ConfigError(
            f"fine_cells={fine_cells} is not divisible by 2**(levels-1)={2 ** (levels - 1)}"
        )

    gl_pts, gl_wts = gauss_legendre(dg_order + 1)

    if levels >= 3:
        n_dg = fine_cells // 4
        dgx = np.linspace(x0, x0 + lx, n_dg + 1)
        dgy = np.linspace(y0, y0 + ly, n_dg + 1)
        fine_x = _gl_partition(dgx, gl_wts)
        fine_y = _gl_partition(dgy, gl_wts)
    else:
        fine_x = np.linspace(x0, x0 + lx, fine_cells + 1)
        fine_y = np.linspace(y0, y0 + ly, fine_cells + 1)

    level_list = [MeshLevel(fine_x, fine_y)]
    for _ in range(levels - 1):
        prev = level_list[0]
        level_list.insert(0, MeshLevel(prev.x_edges[::2], prev.y_edges[::2]))

    dg_index = levels - 3 if levels >= 3 else None
    return MeshHierarchy(level_list, dg_index, gl_pts, gl_wts)
