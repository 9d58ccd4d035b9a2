"""Discrete function spaces: dof maps, reference bases, field evaluation.

Four spaces live on the hierarchy:

* ``W0L`` - continuous bilinear, one dof per vertex;
* ``W1L`` - lowest-order div-conforming (Raviart-Thomas) on rectangles,
  one dof per edge holding the normal velocity component (single valued
  across the edge, so normal continuity is automatic);
* ``W2L`` - piecewise constants, one dof per cell;
* ``W2H`` - discontinuous cubics on the transport elements with a nodal
  Lagrange basis collocated at the 4x4 Gauss-Legendre tensor points.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .mesh import ConfigError, MeshHierarchy, MeshLevel, gauss_legendre


class SpaceKind(str, Enum):
    W0L = "W0L"
    W1L = "W1L"
    W2L = "W2L"
    W2H = "W2H"


@dataclass(frozen=True)
class Space:
    kind: SpaceKind
    level_index: int


# ---------------------------------------------------------------------------
# reference bases
# ---------------------------------------------------------------------------

def lagrange_values(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Values of the Lagrange basis on ``nodes`` at points ``x``: shape (n, len(x))."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.asarray(x, dtype=float)
    n = len(nodes)
    out = np.ones((n, x.size))
    for i in range(n):
        for j in range(n):
            if j != i:
                out[i] *= (x - nodes[j]) / (nodes[i] - nodes[j])
    return out


def lagrange_derivs(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    x = np.asarray(x, dtype=float)
    n = len(nodes)
    out = np.zeros((n, x.size))
    for i in range(n):
        for k in range(n):
            if k == i:
                continue
            term = np.full(x.size, 1.0 / (nodes[i] - nodes[k]))
            for j in range(n):
                if j != i and j != k:
                    term *= (x - nodes[j]) / (nodes[i] - nodes[j])
            out[i] += term
    return out


@dataclass
class BasisEval:
    """Element-local basis data at a set of reference points in [-1, 1]^2.

    ``values`` has shape (n_dofs, n_pts) for scalar spaces and
    (n_dofs, 2, n_pts) for W1L. ``gradients`` holds reference-coordinate
    derivatives (physical derivatives scale by 2/dx, 2/dy per cell);
    ``divergences`` likewise for W1L.
    """
    space: SpaceKind
    points: np.ndarray
    values: np.ndarray
    gradients: np.ndarray | None = None
    divergences: np.ndarray | None = None


def eval_basis(kind: SpaceKind, ref_points: np.ndarray) -> BasisEval:
    """Evaluate the reference basis of ``kind`` at points in [-1, 1]^2."""
    pts = np.atleast_2d(np.asarray(ref_points, dtype=float))
    xi, eta = pts[:, 0], pts[:, 1]
    n = len(xi)
    if kind == SpaceKind.W2L:
        return BasisEval(kind, pts, np.ones((1, n)), np.zeros((1, 2, n)))
    if kind == SpaceKind.W0L:
        # corners ordered (-,-), (+,-), (-,+), (+,+)
        hx = np.stack([(1 - xi) / 2, (1 + xi) / 2])
        hy = np.stack([(1 - eta) / 2, (1 + eta) / 2])
        dhx = np.stack([np.full(n, -0.5), np.full(n, 0.5)])
        dhy = dhx.copy()
        vals = np.empty((4, n))
        grads = np.empty((4, 2, n))
        for b in range(2):
            for a in range(2):
                k = 2 * b + a
                vals[k] = hx[a] * hy[b]
                grads[k, 0] = dhx[a] * hy[b]
                grads[k, 1] = hx[a] * dhy[b]
        return BasisEval(kind, pts, vals, grads)
    if kind == SpaceKind.W1L:
        # dofs ordered [left, right, bottom, top]; unit normal component on
        # the owning edge, zero normal component on every other edge
        vals = np.zeros((4, 2, n))
        vals[0, 0] = (1 - xi) / 2
        vals[1, 0] = (1 + xi) / 2
        vals[2, 1] = (1 - eta) / 2
        vals[3, 1] = (1 + eta) / 2
        divs = np.empty((4, n))
        divs[0] = -0.5
        divs[1] = 0.5
        divs[2] = -0.5
        divs[3] = 0.5
        return BasisEval(kind, pts, vals, divergences=divs)
    if kind == SpaceKind.W2H:
        nodes, _ = gauss_legendre(4)
        lx = lagrange_values(nodes, xi)
        ly = lagrange_values(nodes, eta)
        dlx = lagrange_derivs(nodes, xi)
        dly = lagrange_derivs(nodes, eta)
        vals = np.empty((16, n))
        grads = np.empty((16, 2, n))
        for b in range(4):
            for a in range(4):
                k = 4 * b + a
                vals[k] = lx[a] * ly[b]
                grads[k, 0] = dlx[a] * ly[b]
                grads[k, 1] = lx[a] * dly[b]
        return BasisEval(kind, pts, vals, grads)
    raise ConfigError(f"unknown space kind {kind}")


# ---------------------------------------------------------------------------
# dof maps
# ---------------------------------------------------------------------------

@dataclass
class DofMap:
    space: Space
    n_dofs: int
    level: MeshLevel
    # W2H only: permutations between dof order and fine-level cell order
    w2h_to_fine: np.ndarray | None = None
    fine_to_w2h: np.ndarray | None = None
    n_elements: int = 0


def build_dofmap(hierarchy: MeshHierarchy, space: Space) -> DofMap:
    if not 0 <= space.level_index < hierarchy.n_levels:
        raise ConfigError(f"level index {space.level_index} outside hierarchy")
    level = hierarchy.levels[space.level_index]
    if space.kind == SpaceKind.W0L:
        return DofMap(space, level.n_vertices, level)
    if space.kind == SpaceKind.W1L:
        return DofMap(space, level.n_edges, level)
    if space.kind == SpaceKind.W2L:
        return DofMap(space, level.n_cells, level)
    if space.kind == SpaceKind.W2H:
        if hierarchy.dg_index is None or space.level_index != hierarchy.dg_index:
            raise ConfigError(
                f"W2H must live on the transport level (index {hierarchy.dg_index}), "
                f"got level {space.level_index}"
            )
        fine = hierarchy.fine
        nxd, nyd = level.nx, level.ny
        nxf = fine.nx
        # dof (element (i,j), node (a,b)) <-> fine cell (4i+a, 4j+b)
        i = np.arange(nxd)
        j = np.arange(nyd)
        a = np.arange(4)
        b = np.arange(4)
        jj, bb, aa = np.meshgrid(j, b, a, indexing="ij")
        w2h_to_fine = np.empty(nxd * nyd * 16, dtype=np.int64)
        for ei in range(nxd):
            cols = 4 * ei + aa
            rows = 4 * jj + bb
            dofs = ((jj * nxd + ei) * 16 + bb * 4 + aa).ravel()
            w2h_to_fine[dofs] = (rows * nxf + cols).ravel()
        fine_to_w2h = np.empty_like(w2h_to_fine)
        fine_to_w2h[w2h_to_fine] = np.arange(len(w2h_to_fine))
        return DofMap(space, nxd * nyd * 16, level,
                      w2h_to_fine=w2h_to_fine, fine_to_w2h=fine_to_w2h,
                      n_elements=nxd * nyd)
    raise ConfigError(f"unknown space kind {space.kind}")


# ---------------------------------------------------------------------------
# field evaluation and projection
# ---------------------------------------------------------------------------

def _ref_coords(level: MeshLevel, pts, i, j):
    xi = 2 * (pts[:, 0] - level.x_edges[i]) / level.dx[i] - 1
    eta = 2 * (pts[:, 1] - level.y_edges[j]) / level.dy[j] - 1
    return xi, eta


def evaluate_field(hierarchy: MeshHierarchy, space: Space, coeffs: np.ndarray,
                   points: np.ndarray) -> np.ndarray:
    """Point values of a discrete field (vector valued for W1L)."""
    level = hierarchy.levels[space.level_index]
    pts = level.wrap(points)
    i, j = level.locate(pts)
    nx, ny = level.nx, level.ny
    if space.kind == SpaceKind.W2L:
        return coeffs[j * nx + i]
    if space.kind == SpaceKind.W0L:
        xi, eta = _ref_coords(level, pts, i, j)
        corners = np.stack([
            coeffs[j * nx + i],
            coeffs[j * nx + (i + 1) % nx],
            coeffs[((j + 1) % ny) * nx + i],
            coeffs[((j + 1) % ny) * nx + (i + 1) % nx],
        ])
        hx = np.stack([(1 - xi) / 2, (1 + xi) / 2])
        hy = np.stack([(1 - eta) / 2, (1 + eta) / 2])
        return (corners * np.stack([hx[0] * hy[0], hx[1] * hy[0],
                                    hx[0] * hy[1], hx[1] * hy[1]])).sum(axis=0)
    if space.kind == SpaceKind.W1L:
        xi, eta = _ref_coords(level, pts, i, j)
        nxy = nx * ny
        ul = coeffs[j * nx + i]
        ur = coeffs[j * nx + (i + 1) % nx]
        vb = coeffs[nxy + j * nx + i]
        vt = coeffs[nxy + ((j + 1) % ny) * nx + i]
        ux = ul * (1 - xi) / 2 + ur * (1 + xi) / 2
        uy = vb * (1 - eta) / 2 + vt * (1 + eta) / 2
        return np.column_stack([ux, uy])
    if space.kind == SpaceKind.W2H:
        xi, eta = _ref_coords(level, pts, i, j)
        nodes, _ = gauss_legendre(4)
        lx = lagrange_values(nodes, xi)  # (4, npts)
        ly = lagrange_values(nodes, eta)
        elem = j * nx + i
        out = np.zeros(len(xi))
        for b in range(4):
            for a in range(4):
                out += coeffs[elem * 16 + b * 4 + a] * lx[a] * ly[b]
        return out
    raise ConfigError(f"unknown space kind {space.kind}")


@dataclass
class CellQuadrature:
    """Tensor Gauss-Legendre rule on every cell of a level.

    ``xq``/``yq`` are (n_cells, nq) physical coordinates, ``wq`` the matching
    physical weights (include the cell Jacobian).
    """
    level: MeshLevel
    n1d: int
    ref: np.ndarray          # (nq, 2) reference points
    ref_w: np.ndarray        # (nq,)
    xq: np.ndarray
    yq: np.ndarray
    wq: np.ndarray


def cell_quadrature(level: MeshLevel, n1d: int = 3) -> CellQuadrature:
    p, w = gauss_legendre(n1d)
    xi, eta = np.meshgrid(p, p)
    xi, eta = xi.ravel(), eta.ravel()
    rw = np.outer(w, w).ravel()
    xc = 0.5 * (level.x_edges[:-1] + level.x_edges[1:])
    yc = 0.5 * (level.y_edges[:-1] + level.y_edges[1:])
    gxc, gyc = np.meshgrid(xc, yc)
    gdx, gdy = np.meshgrid(level.dx, level.dy)
    xq = gxc.ravel()[:, None] + 0.5 * gdx.ravel()[:, None] * xi[None, :]
    yq = gyc.ravel()[:, None] + 0.5 * gdy.ravel()[:, None] * eta[None, :]
    wq = 0.25 * (gdx * gdy).ravel()[:, None] * rw[None, :]
    return CellQuadrature(level, n1d, np.column_stack([xi, eta]), rw, xq, yq, wq)


def project_w2l(level: MeshLevel, fn, n1d: int = 3) -> np.ndarray:
    """Cell averages of an analytic scalar (the L2 projection onto W2L)."""
    q = cell_quadrature(level, n1d)
    vals = fn(q.xq, q.yq)
    return (q.wq * vals).sum(axis=1) / level.cell_areas


def interpolate_w1l(level: MeshLevel, fn_vec, n1d: int = 3) -> np.ndarray:
    """Edge-mean normal components of an analytic vector field."""
    p, w = gauss_legendre(n1d)
    nx, ny = level.nx, level.ny
    out = np.empty(level.n_edges)

    ymid = 0.5 * (level.y_edges[:-1] + level.y_edges[1:])
    yq = ymid[:, None] + 0.5 * level.dy[:, None] * p[None, :]      # (ny, n1d)
    for i in range(nx):
        u, _ = fn_vec(np.full_like(yq, level.x_edges[i]), yq)
        out[np.arange(ny) * nx + i] = (u * w).sum(axis=1) / 2.0

    xmid = 0.5 * (level.x_edges[:-1] + level.x_edges[1:])
    xq = xmid[:, None] + 0.5 * level.dx[:, None] * p[None, :]      # (nx, n1d)
    for j in range(ny):
        _, v = fn_vec(xq, np.full_like(xq, level.y_edges[j]))
        out[nx * ny + j * nx + np.arange(nx)] = (v * w).sum(axis=1) / 2.0
    return out


def interpolate_w2h(hierarchy: MeshHierarchy, dofmap: DofMap, fn) -> np.ndarray:
    """Nodal interpolant at the collocation points, returned in dof order."""
    gx, gy = np.meshgrid(hierarchy.gl_x, hierarchy.gl_y)
    vals_fine = fn(gx, gy).ravel()  # fine-cell order
    return vals_fine[dofmap.w2h_to_fine]
