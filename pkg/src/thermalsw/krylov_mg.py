"""GMRES, inter-level transfers, and the block-system V-cycle.

The implicit update solves a fixed approximate Jacobian

    [ M1            -(dt/4) g D^T   -(dt/4) D^T ]
    [ (dt/2) H D     M2              0          ]
    [ 0              0               M2         ]

re-assembled geometrically on every level of the hierarchy. Each level is
smoothed with a short unpreconditioned GMRES run on the coupled block
operator (two iterations, four on the coarsest level) inside a standard
V-cycle. The buoyancy block is diagonal, so its update is taken exactly
and the cycle only has to work on the velocity/depth coupling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import MeshHierarchy, MeshLevel
from . import operators


class MultigridError(RuntimeError):
    """V-cycle diverged; carries the per-level residual norms."""

    def __init__(self, message, level_residuals=None):
        super().__init__(message)
        self.level_residuals = level_residuals or []


# ---------------------------------------------------------------------------
# GMRES
# ---------------------------------------------------------------------------

@dataclass
class GmresResult:
    x: np.ndarray
    residuals: list
    breakdown: bool = False


def gmres(apply_op, b, x0=None, max_iters=None, tol=0.0) -> GmresResult:
    """Full-memory GMRES (no restarts) with Givens rotations.

    ``apply_op`` is a callable y = A @ x. Residual norms are recorded per
    iteration and are non-increasing. An Arnoldi breakdown means the exact
    solution was reached in the current Krylov space; the result is
    returned with ``breakdown=True``.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    if max_iters is None:
        max_iters = n
    max_iters = min(max_iters, n)
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()

    r = b - apply_op(x0)
    beta = np.linalg.norm(r)
    bnorm = np.linalg.norm(b)
    target = tol * bnorm
    residuals = [beta]
    if beta == 0.0 or beta <= target:
        return GmresResult(x0, residuals)

    V = np.empty((max_iters + 1, n))
    H = np.zeros((max_iters + 1, max_iters))
    cs = np.zeros(max_iters)
    sn = np.zeros(max_iters)
    g = np.zeros(max_iters + 1)
    V[0] = r / beta
    g[0] = beta

    breakdown = False
    k = 0
    for k in range(max_iters):
        # copy: the operator may hand back (a view of) its input
        w = np.array(apply_op(V[k]), dtype=float)
        for i in range(k + 1):
            H[i, k] = V[i] @ w
            w -= H[i, k] * V[i]
        H[k + 1, k] = np.linalg.norm(w)
        if H[k + 1, k] <= 1e-14 * max(beta, 1.0):
            breakdown = True
        else:
            V[k + 1] = w / H[k + 1, k]
        # apply the accumulated rotations, then zero the new subdiagonal
        for i in range(k):
            t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
            H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
            H[i, k] = t
        nu = np.hypot(H[k, k], H[k + 1, k])
        cs[k] = H[k, k] / nu
        sn[k] = H[k + 1, k] / nu
        H[k, k] = nu
        H[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        residuals.append(abs(g[k + 1]))
        if breakdown or abs(g[k + 1]) <= target:
            break

    m = k + 1
    y = np.linalg.solve(np.triu(H[:m, :m]), g[:m])
    x = x0 + V[:m].T @ y
    return GmresResult(x, residuals, breakdown)


# ---------------------------------------------------------------------------
# transfers
# ---------------------------------------------------------------------------

@dataclass
class TransferPair:
    """Restriction/prolongation between two consecutive levels.

    ``p1``/``p2`` prolong edge and cell fields from coarse to fine
    (constants are preserved); ``r1``/``r2`` restrict fields back (flux
    and area weighted means, so also constant-preserving). Residuals are
    restricted with the transposes of the prolongations.
    """
    p1: sp.csr_matrix
    p2: sp.csr_matrix
    r1: sp.csr_matrix
    r2: sp.csr_matrix
    p1t: sp.csr_matrix = field(init=False)
    p2t: sp.csr_matrix = field(init=False)
    p_full: sp.csr_matrix = field(init=False)
    pt_full: sp.csr_matrix = field(init=False)

    def __post_init__(self):
        self.p1t = self.p1.T.tocsr()
        self.p2t = self.p2.T.tocsr()
        self.p_full = sp.block_diag([self.p1, self.p2, self.p2]).tocsr()
        self.pt_full = self.p_full.T.tocsr()


def _edge_prolongation(coarse: MeshLevel, fine: MeshLevel) -> sp.csr_matrix:
    nx, ny = coarse.nx, coarse.ny
    nxf, nyf = fine.nx, fine.ny
    rows, cols, vals = [], [], []
    ii, jj = np.meshgrid(np.arange(nxf), np.arange(nyf))

    # fine x-normal edges: even columns sit on coarse edges, odd columns
    # average the two parallel coarse neighbours
    e = (jj * nxf + ii).ravel()
    ic, jc = ii // 2, jj // 2
    even = (ii % 2 == 0).ravel()
    c_here = (jc * nx + ic).ravel()
    c_right = (jc * nx + (ic + 1) % nx).ravel()
    rows += [e[even], e[~even], e[~even]]
    cols += [c_here[even], c_here[~even], c_right[~even]]
    vals += [np.ones(even.sum()), np.full((~even).sum(), 0.5), np.full((~even).sum(), 0.5)]

    off_f = nxf * nyf
    off_c = nx * ny
    e = (off_f + jj * nxf + ii).ravel()
    even = (jj % 2 == 0).ravel()
    c_here = (off_c + jc * nx + ic).ravel()
    c_above = (off_c + ((jc + 1) % ny) * nx + ic).ravel()
    rows += [e[even], e[~even], e[~even]]
    cols += [c_here[even], c_here[~even], c_above[~even]]
    vals += [np.ones(even.sum()), np.full((~even).sum(), 0.5), np.full((~even).sum(), 0.5)]

    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fine.n_edges, coarse.n_edges),
    ).tocsr()


def _edge_restriction(coarse: MeshLevel, fine: MeshLevel) -> sp.csr_matrix:
    """Coarse normal component = length-weighted mean of the two coincident fine edges."""
    nx, ny = coarse.nx, coarse.ny
    nxf = fine.nx
    rows, cols, vals = [], [], []
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    ic = (jj * nx + ii).ravel()
    for half in (0, 1):
        jf = (2 * jj + half).ravel()
        ef = (jf * nxf + 2 * ii.ravel())
        rows.append(ic)
        cols.append(ef)
        vals.append(fine.dy[jf] / coarse.dy[jj.ravel()])
    off_f = nxf * fine.ny
    off_c = nx * ny
    ic = (off_c + jj * nx + ii).ravel()
    for half in (0, 1):
        if_ = (2 * ii + half).ravel()
        ef = off_f + (2 * jj.ravel()) * nxf + if_
        rows.append(ic)
        cols.append(ef)
        vals.append(fine.dx[if_] / coarse.dx[ii.ravel()])
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(coarse.n_edges, fine.n_edges),
    ).tocsr()


def _cell_prolongation(coarse: MeshLevel, fine: MeshLevel) -> sp.csr_matrix:
    nx = coarse.nx
    nxf, nyf = fine.nx, fine.ny
    ii, jj = np.meshgrid(np.arange(nxf), np.arange(nyf))
    rows = (jj * nxf + ii).ravel()
    cols = ((jj // 2) * nx + ii // 2).ravel()
    return sp.coo_matrix((np.ones(rows.size), (rows, cols)),
                         shape=(fine.n_cells, coarse.n_cells)).tocsr()


def _cell_restriction(coarse: MeshLevel, fine: MeshLevel, p2: sp.csr_matrix) -> sp.csr_matrix:
    inv_ac = sp.diags(1.0 / coarse.cell_areas)
    af = sp.diags(fine.cell_areas)
    return (inv_ac @ p2.T @ af).tocsr()


def build_transfers(hierarchy: MeshHierarchy) -> list[TransferPair]:
    pairs = []
    for l in range(hierarchy.n_levels - 1):
        coarse, fine = hierarchy.levels[l], hierarchy.levels[l + 1]
        p1 = _edge_prolongation(coarse, fine)
        p2 = _cell_prolongation(coarse, fine)
        r1 = _edge_restriction(coarse, fine)
        r2 = _cell_restriction(coarse, fine, p2)
        pairs.append(TransferPair(p1, p2, r1, r2))
    return pairs


# ---------------------------------------------------------------------------
# block system
# ---------------------------------------------------------------------------

@dataclass
class BlockSystem:
    """The 3x3 approximate Jacobian on one level, applied matrix-free.

    ``apply`` is the operator in physical variables. The solver works in
    equilibrated variables (depth and buoyancy scaled by sqrt(g/2H) and
    sqrt(g/2H)/g) in which both velocity/depth couplings carry the same
    factor dt*sqrt(gH/8); the raw system is far too non-normal for a
    short GMRES smoother at geophysical scales.
    """
    m1: sp.csr_matrix
    m2_diag: np.ndarray
    div: sp.csr_matrix
    div_t: sp.csr_matrix
    g: float
    h_mean: float
    dt: float

    def __post_init__(self):
        self.gamma_h = np.sqrt(self.g / (2.0 * self.h_mean))
        self.gamma_s = self.gamma_h / self.g
        self.coupling = 0.25 * self.dt * self.g / self.gamma_h
        m2 = sp.diags(self.m2_diag)
        zero = sp.csr_matrix((self.n_c, self.n_c))
        zero_uc = sp.csr_matrix((self.n_c, self.n_u))
        self._scaled_mat = sp.bmat([
            [self.m1, -self.coupling * self.div_t, -self.coupling * self.div_t],
            [self.coupling * self.div, m2, zero],
            [zero_uc, zero, m2],
        ]).tocsr()

    @property
    def n_u(self) -> int:
        return self.m1.shape[0]

    @property
    def n_c(self) -> int:
        return self.m2_diag.size

    @property
    def n(self) -> int:
        return self.n_u + 2 * self.n_c

    def split(self, x):
        nu, nc = self.n_u, self.n_c
        return x[:nu], x[nu:nu + nc], x[nu + nc:]

    def apply(self, x: np.ndarray) -> np.ndarray:
        xu, xh, xs = self.split(x)
        yu = self.m1 @ xu - 0.25 * self.dt * (self.div_t @ (self.g * xh + xs))
        yh = 0.5 * self.dt * self.h_mean * (self.div @ xu) + self.m2_diag * xh
        ys = self.m2_diag * xs
        return np.concatenate([yu, yh, ys])

    def apply_scaled(self, y: np.ndarray) -> np.ndarray:
        return self._scaled_mat @ y

    def scale_vars(self, x: np.ndarray) -> np.ndarray:
        xu, xh, xs = self.split(x)
        return np.concatenate([xu, self.gamma_h * xh, self.gamma_s * xs])

    def unscale_vars(self, y: np.ndarray) -> np.ndarray:
        yu, yh, ys = self.split(y)
        return np.concatenate([yu, yh / self.gamma_h, ys / self.gamma_s])

    def scale_rhs(self, b: np.ndarray) -> np.ndarray:
        bu, bh, bs = self.split(b)
        return np.concatenate([bu, self.gamma_h * bh, self.gamma_s * bs])


def build_block_systems(hierarchy: MeshHierarchy, g: float, h_mean: float,
                        dt: float) -> list[BlockSystem]:
    systems = []
    for level in hierarchy.levels:
        m1 = operators.velocity_mass(level).mat
        d = operators.divergence(level).mat
        systems.append(BlockSystem(m1, level.cell_areas.copy(), d,
                                   d.T.tocsr(), g, h_mean, dt))
    return systems


@dataclass
class SolverParams:
    smooth_iters: int = 2
    coarse_iters: int = 4
    cycle_tol: float = 1e-13
    max_cycles: int = 50

    def __post_init__(self):
        if min(self.smooth_iters, self.coarse_iters, self.max_cycles) < 1:
            raise ValueError("solver iteration counts must be >= 1")


def _prolong(pair: TransferPair, x):
    return pair.p_full @ x


def _smooth(apply_op, b, x0, k, need_residual=True):
    """k-step minimal-residual smoothing (the GMRES(k) iterate).

    The least-squares over the k Krylov columns is solved through its
    (k x k) Gram system, which is plenty for short smoothing sweeps.
    Returns (x, r) with the updated iterate and its residual (None unless
    requested); ``x0=None`` means a zero initial guess and saves the
    initial operator apply.
    """
    r = b if x0 is None else b - apply_op(x0)
    mapped = np.empty((k, r.size))
    mapped[0] = apply_op(r)
    for j in range(1, k):
        mapped[j] = apply_op(mapped[j - 1])
    gram = mapped @ mapped.T
    rhs = mapped @ r
    try:
        c = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        return (np.zeros_like(b) if x0 is None else x0), r
    # Krylov columns are [r, mapped[0], ..., mapped[k-2]]
    dx = c[0] * r
    if k > 1:
        dx += c[1:] @ mapped[:k - 1]
    x = dx if x0 is None else x0 + dx
    r_new = r - c @ mapped if need_residual else None
    return x, r_new


def _restrict_dual(pair: TransferPair, sys_f: BlockSystem, r):
    return pair.pt_full @ r


def vcycle(systems: list[BlockSystem], transfers: list[TransferPair],
           rhs: np.ndarray, x0: np.ndarray | None, params: SolverParams) -> np.ndarray:
    """One V-cycle over the hierarchy (finest level last in ``systems``).

    Takes and returns physical variables; smoothing happens in the
    equilibrated variables. The per-component scale factors are the same
    on every level, so they commute with the transfers.
    """
    a = systems[-1]
    y = None if x0 is None else a.scale_vars(np.asarray(x0, dtype=float))
    y = _vcycle(len(systems) - 1, systems, transfers, a.scale_rhs(rhs), y, params)
    return a.unscale_vars(y)


def _vcycle(l, systems, transfers, rhs, x, params):
    a = systems[l]
    if l == 0:
        return _smooth(a.apply_scaled, rhs, x, params.coarse_iters,
                       need_residual=False)[0]
    x, r = _smooth(a.apply_scaled, rhs, x, params.smooth_iters)
    rc = _restrict_dual(transfers[l - 1], a, r)
    ec = _vcycle(l - 1, systems, transfers, rc, None, params)
    x = x + _prolong(transfers[l - 1], ec)
    return _smooth(a.apply_scaled, rhs, x, params.smooth_iters,
                   need_residual=False)[0]


def solve_block(systems, transfers, rhs, params: SolverParams):
    """Iterate V-cycles until the block residual meets params.cycle_tol.

    Cycling stops early once the residual stagnates (the round-off floor
    of the assembled right-hand side); a sustained residual increase is a
    genuine divergence and raises MultigridError with per-level residuals.
    """
    a = systems[-1]
    srhs = a.scale_rhs(rhs)
    y = np.zeros_like(srhs)
    bnorm = np.linalg.norm(srhs)
    history = [bnorm]
    if bnorm == 0.0:
        return y, history
    best_res = bnorm
    best_y = y
    stagnant = 0
    for cycle in range(params.max_cycles):
        y = _vcycle(len(systems) - 1, systems, transfers, srhs,
                    y if cycle else None, params)
        res = np.linalg.norm(srhs - a.apply_scaled(y))
        history.append(res)
        if res <= params.cycle_tol * bnorm:
            return a.unscale_vars(y), history
        if res > 5.0 * best_res:
            raise MultigridError(
                f"V-cycle diverged: residual grew from {best_res:.3e} to {res:.3e}",
                level_residuals=_level_residuals(systems, transfers, srhs, y),
            )
        if res < best_res:
            if res > 0.9 * best_res:
                stagnant += 1
            else:
                stagnant = 0
            best_res = res
            best_y = y
        else:
            stagnant += 1
        if stagnant >= 3:
            return a.unscale_vars(best_y), history
    return a.unscale_vars(best_y), history


def _level_residuals(systems, transfers, srhs, y):
    out = []
    r = srhs - systems[-1].apply_scaled(y)
    out.append(np.linalg.norm(r))
    for l in range(len(systems) - 1, 0, -1):
        r = _restrict_dual(transfers[l - 1], systems[l], r)
        out.append(np.linalg.norm(r))
    return out[::-1]


def solve_newton_update(systems, transfers, residuals, params: SolverParams):
    """Solve the quasi-Newton block system for one update.

    ``residuals = (r_u, r_h, r_s)`` on the finest level. The buoyancy
    update is diagonal (dS = -r_s / cell areas) and is eliminated exactly;
    the remaining coupled system is V-cycled with the buoyancy block kept
    identically zero.
    """
    r_u, r_h, r_s = residuals
    a = systems[-1]
    ds = -r_s / a.m2_diag
    bu = -r_u + 0.25 * a.dt * (a.div_t @ ds)
    rhs = np.concatenate([bu, -r_h, np.zeros_like(ds)])
    x, history = solve_block(systems, transfers, rhs, params)
    du, dh, _ = a.split(x)
    return du, dh, ds, history
