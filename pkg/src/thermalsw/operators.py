"""Assembly of the bilinear forms used by the implicit dynamics.

All operators are assembled per level of the hierarchy; entries are exact
(closed-form or Gauss-Legendre rules that integrate the polynomial
integrands exactly). Facet couplings follow one fixed orientation: the
edge normal points from the minus cell into the plus cell, the jump is
``[a] = a_plus - a_minus`` and the mean ``{a} = (a_plus + a_minus) / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import MeshLevel, StateError
from .spaces import Space, SpaceKind


@dataclass
class SparseOperator:
    """Assembled bilinear form in compressed sparse row storage."""
    mat: sp.csr_matrix
    row_space: SpaceKind
    col_space: SpaceKind

    @property
    def shape(self):
        return self.mat.shape

    def __matmul__(self, x):
        return self.mat @ x

    def to_dense(self) -> np.ndarray:
        return self.mat.toarray()

    def dump(self, fh) -> None:
        """Write the dense matrix as text (small meshes / oracle checks only)."""
        fh.write(f"# {self.row_space.value} x {self.col_space.value} {self.shape[0]} {self.shape[1]}\n")
        np.savetxt(fh, self.to_dense(), fmt="%.17g")


def _grids(level: MeshLevel):
    ii, jj = np.meshgrid(np.arange(level.nx), np.arange(level.ny))
    return ii, jj


def velocity_mass(level: MeshLevel) -> SparseOperator:
    """Mass matrix on the div-conforming edge space (block tridiagonal)."""
    nx, ny = level.nx, level.ny
    nxy = nx * ny
    ii, jj = _grids(level)
    rows, cols, vals = [], [], []

    # x-normal edges couple along x within a row
    e = jj * nx + ii
    dxl = level.dx[(ii - 1) % nx]
    dxr = level.dx[ii]
    dyj = level.dy[jj]
    rows.append(e); cols.append(e); vals.append(dyj * (dxl + dxr) / 3.0)
    er = jj * nx + (ii + 1) % nx  # shares the cell to the right
    rows.append(e); cols.append(er); vals.append(dyj * dxr / 6.0)
    rows.append(er); cols.append(e); vals.append(dyj * dxr / 6.0)

    # y-normal edges couple along y within a column
    e = nxy + jj * nx + ii
    dyb = level.dy[(jj - 1) % ny]
    dyt = level.dy[jj]
    dxi = level.dx[ii]
    rows.append(e); cols.append(e); vals.append(dxi * (dyb + dyt) / 3.0)
    et = nxy + ((jj + 1) % ny) * nx + ii
    rows.append(e); cols.append(et); vals.append(dxi * dyt / 6.0)
    rows.append(et); cols.append(e); vals.append(dxi * dyt / 6.0)

    mat = sp.coo_matrix(
        (np.concatenate([v.ravel() for v in vals]),
         (np.concatenate([r.ravel() for r in rows]),
          np.concatenate([c.ravel() for c in cols]))),
        shape=(2 * nxy, 2 * nxy),
    ).tocsr()
    return SparseOperator(mat, SpaceKind.W1L, SpaceKind.W1L)


def cell_mass(level: MeshLevel) -> SparseOperator:
    """Diagonal mass matrix of the piecewise constants (entries = cell areas)."""
    mat = sp.diags(level.cell_areas).tocsr()
    return SparseOperator(mat, SpaceKind.W2L, SpaceKind.W2L)


def divergence(level: MeshLevel) -> SparseOperator:
    """Weak divergence: rows over cells, four entries of +/- edge length."""
    edges = level.cell_edge_ids  # [left, right, bottom, top]
    ii, jj = _grids(level)
    dxi = level.dx[ii].ravel()
    dyj = level.dy[jj].ravel()
    cells = np.repeat(np.arange(level.n_cells), 4)
    cols = edges.ravel()
    vals = np.column_stack([-dyj, dyj, -dxi, dxi]).ravel()
    mat = sp.coo_matrix((vals, (cells, cols)),
                        shape=(level.n_cells, level.n_edges)).tocsr()
    return SparseOperator(mat, SpaceKind.W2L, SpaceKind.W1L)


# local 1D mass of the two linear hats on [0, 1], times interval length
_Q1D = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])
# corner order (-,-), (+,-), (-,+), (+,+): tensor product of the 1D table
_Q2D = np.einsum("ac,bd->abcd", _Q1D, _Q1D).reshape(2, 2, 2, 2)
_QLOC = np.array([[_Q2D[a % 2, a // 2, b % 2, b // 2] for b in range(4)] for a in range(4)])


def weighted_vertex_mass(level: MeshLevel, h: np.ndarray) -> SparseOperator:
    """Vertex mass matrix weighted by a cellwise-constant field h > 0."""
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0) or not np.all(np.isfinite(h)):
        raise StateError(f"weighted vertex mass needs h > 0 everywhere; min(h) = {h.min():g}")
    verts = level.cell_vertex_ids  # (ncells, 4)
    scale = h * level.cell_areas   # (ncells,)
    vals = scale[:, None, None] * _QLOC[None, :, :]
    rows = np.broadcast_to(verts[:, :, None], vals.shape)
    cols = np.broadcast_to(verts[:, None, :], vals.shape)
    mat = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                        shape=(level.n_vertices, level.n_vertices)).tocsr()
    return SparseOperator(mat, SpaceKind.W0L, SpaceKind.W0L)


def vertex_mass(level: MeshLevel) -> SparseOperator:
    return weighted_vertex_mass(level, np.ones(level.n_cells))


def perp_grad_apply(level: MeshLevel, u: np.ndarray) -> np.ndarray:
    """Per-vertex integrals of grad-perp(basis) . u for an edge field u.

    grad-perp(psi) = (d(psi)/dy, -d(psi)/dx), oriented so that the
    periodic integration-by-parts identity int psi curl(u) =
    int grad-perp(psi) . u holds; this feeds the potential vorticity
    solve and the weak curl diagnostic.
    """
    nx, ny = level.nx, level.ny
    nxy = nx * ny
    ii, jj = _grids(level)
    dxi = level.dx[ii].ravel()
    dyj = level.dy[jj].ravel()
    edges = level.cell_edge_ids
    ul, ur = u[edges[:, 0]], u[edges[:, 1]]
    vb, vt = u[edges[:, 2]], u[edges[:, 3]]

    # closed forms per cell: int X_alpha N dx over [0, dx] with linear hats,
    # paired with int Y_alpha' dy = +/- 1
    c3, c6 = 1.0 / 3.0, 1.0 / 6.0
    intxL = np.stack([c3 * dxi, c6 * dxi, c3 * dxi, c6 * dxi])  # corners x (-,+,-,+)
    intxR = np.stack([c6 * dxi, c3 * dxi, c6 * dxi, c3 * dxi])
    intyB = np.stack([c3 * dyj, c3 * dyj, c6 * dyj, c6 * dyj])  # corners y (-,-,+,+)
    intyT = np.stack([c6 * dyj, c6 * dyj, c3 * dyj, c3 * dyj])
    sgny = np.array([-1.0, -1.0, 1.0, 1.0])  # int Y_alpha' dy
    sgnx = np.array([-1.0, 1.0, -1.0, 1.0])  # int X_alpha' dx

    # +int d(psi)/dy * u_x : x-integral of (hat_x * u_x) times int Y' dy
    contrib = (intxL * ul[None, :] + intxR * ur[None, :]) * sgny[:, None]
    # -int d(psi)/dx * u_y : y-integral of (hat_y * u_y) times int X' dx
    contrib -= (intyB * vb[None, :] + intyT * vt[None, :]) * sgnx[:, None]

    out = np.zeros(level.n_vertices)
    np.add.at(out, level.cell_vertex_ids.T, contrib)
    return out


def vertex_dual_areas(level: MeshLevel) -> np.ndarray:
    """Integrals of the vertex basis functions (quarter of each adjacent cell)."""
    out = np.zeros(level.n_vertices)
    np.add.at(out, level.cell_vertex_ids,
              0.25 * level.cell_areas[:, None] * np.ones(4)[None, :])
    return out


# ---------------------------------------------------------------------------
# facet couplings on the cell facets of one level
# ---------------------------------------------------------------------------

def _edge_means_jumps(level: MeshLevel, c: np.ndarray):
    minus, plus, _, length = level.edge_arrays
    return 0.5 * (c[plus] + c[minus]), c[plus] - c[minus], minus, plus, length


def facet_buoyancy_gradient(level: MeshLevel, s_bar: np.ndarray,
                            skew: bool = False) -> SparseOperator:
    """Facet coupling of the momentum equation, acting on a cell field T.

    Centered form: per edge, length * {s_bar} * [T] against the edge's
    unit normal-component basis. The skew form replaces it by
    (1/2){s_bar}[T] - (1/2)[s_bar]{T}; its volume companion
    -(1/2) D^T (s_bar T) is applied separately.
    """
    smean, sjump, minus, plus, length = _edge_means_jumps(level, s_bar)
    n_edges = level.n_edges
    if skew:
        coef_plus = length * (0.5 * smean - 0.25 * sjump)
        coef_minus = length * (-0.5 * smean - 0.25 * sjump)
    else:
        coef_plus = length * smean
        coef_minus = -length * smean
    rows = np.concatenate([np.arange(n_edges), np.arange(n_edges)])
    cols = np.concatenate([plus, minus])
    vals = np.concatenate([coef_plus, coef_minus])
    mat = sp.coo_matrix((vals, (rows, cols)),
                        shape=(n_edges, level.n_cells)).tocsr()
    return SparseOperator(mat, SpaceKind.W1L, SpaceKind.W2L)


def facet_buoyancy_flux(level: MeshLevel, s_bar: np.ndarray,
                        skew: bool = False) -> SparseOperator:
    """Facet coupling of the buoyancy equation, acting on edge normal fluxes.

    Assembled cell by cell (independently of facet_buoyancy_gradient, whose
    negative transpose it must equal in the centered case - that equality is
    the discrete energy-cancellation mechanism).
    """
    nx, ny = level.nx, level.ny
    edges = level.cell_edge_ids                # [left, right, bottom, top]
    s = np.asarray(s_bar, dtype=float)
    sgrid = s.reshape(ny, nx)
    # neighbour values per cell side
    s_left = np.roll(sgrid, 1, axis=1).ravel()
    s_right = np.roll(sgrid, -1, axis=1).ravel()
    s_below = np.roll(sgrid, 1, axis=0).ravel()
    s_above = np.roll(sgrid, -1, axis=0).ravel()
    ii, jj = _grids(level)
    dxi = level.dx[ii].ravel()
    dyj = level.dy[jj].ravel()

    # cell is the plus side of its left/bottom edges, minus side of right/top
    mean_l, jump_l = 0.5 * (s + s_left), s - s_left
    mean_r, jump_r = 0.5 * (s_right + s), s_right - s
    mean_b, jump_b = 0.5 * (s + s_below), s - s_below
    mean_t, jump_t = 0.5 * (s_above + s), s_above - s
    if skew:
        v_l = dyj * (-0.5 * mean_l + 0.25 * jump_l)
        v_r = dyj * (0.5 * mean_r + 0.25 * jump_r)
        v_b = dxi * (-0.5 * mean_b + 0.25 * jump_b)
        v_t = dxi * (0.5 * mean_t + 0.25 * jump_t)
    else:
        v_l = -dyj * mean_l
        v_r = dyj * mean_r
        v_b = -dxi * mean_b
        v_t = dxi * mean_t

    cells = np.repeat(np.arange(level.n_cells), 4)
    cols = edges.ravel()
    vals = np.column_stack([v_l, v_r, v_b, v_t]).ravel()
    mat = sp.coo_matrix((vals, (cells, cols)),
                        shape=(level.n_cells, level.n_edges)).tocsr()
    return SparseOperator(mat, SpaceKind.W2L, SpaceKind.W1L)


def facet_upwind_penalty(level: MeshLevel, fn_edges: np.ndarray) -> SparseOperator:
    """Jump penalty |F.n| [sigma][s]: a weighted graph Laplacian over cells."""
    minus, plus, _, length = level.edge_arrays
    w = np.abs(np.asarray(fn_edges, dtype=float)) * length
    rows = np.concatenate([plus, plus, minus, minus])
    cols = np.concatenate([plus, minus, minus, plus])
    vals = np.concatenate([w, -w, w, -w])
    mat = sp.coo_matrix((vals, (rows, cols)),
                        shape=(level.n_cells, level.n_cells)).tocsr()
    return SparseOperator(mat, SpaceKind.W2L, SpaceKind.W2L)
