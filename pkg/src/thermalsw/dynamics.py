"""Coupled implicit time stepping for the thermal shallow water system.

Prognostics are the velocity u (div-conforming edge space), depth h and
depth-weighted buoyancy S (cell space) on the finest level. Each step
solves the centered implicit system with a quasi-Newton iteration: the
time-averaged diagnostics (mass flux, Bernoulli potential, half depth,
potential vorticity) are refreshed, the buoyancy path produces the
time-averaged cell buoyancy s_bar, residuals are assembled, and a fixed
approximate Jacobian is inverted by the multigrid solver.

Five buoyancy schemes are provided. The high-order pair transports a
collocated DG buoyancy with the Runge-Kutta integrator and projects it
back to the cells; the low-order variants diagnose s = S/h per cell and
use centered, skew-symmetric centered, or skew-symmetric upwinded facet
fluxes. The centered and skew-centered forms are algebraically identical
on the lowest-order spaces; the upwinded form dissipates tracer variance
and (by the missing adjoint in the momentum equation) breaks exact
energy conservation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import krylov_mg, operators
from .mesh import MeshHierarchy, MeshLevel, StateError
from .spaces import Space, SpaceKind, build_dofmap, cell_quadrature, eval_basis
from .transport import TransportOperator


class BuoyancyScheme(str, Enum):
    HIGH_ORDER_UPWIND = "HighOrderUpwind"
    HIGH_ORDER_CENTERED = "HighOrderCentered"
    LOW_CENTERED = "LowCentered"
    LOW_SKEW_CENTERED = "LowSkewCentered"
    LOW_SKEW_UPWIND = "LowSkewUpwind"

    @property
    def high_order(self) -> bool:
        return self in (BuoyancyScheme.HIGH_ORDER_UPWIND, BuoyancyScheme.HIGH_ORDER_CENTERED)

    @property
    def skew(self) -> bool:
        return self in (BuoyancyScheme.LOW_SKEW_CENTERED, BuoyancyScheme.LOW_SKEW_UPWIND)


@dataclass
class State:
    u: np.ndarray
    h: np.ndarray
    S: np.ndarray
    s_high: np.ndarray | None = None

    def copy(self) -> "State":
        sh = None if self.s_high is None else self.s_high.copy()
        return State(self.u.copy(), self.h.copy(), self.S.copy(), sh)

    def validate(self) -> None:
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.h))
                and np.all(np.isfinite(self.S))):
            raise StateError("non-finite prognostic field")
        if np.any(self.h <= 0):
            raise StateError(f"depth lost positivity: min(h) = {self.h.min():g}")


@dataclass
class Diagnostics:
    """Time-averaged diagnostics between two states."""
    flux: np.ndarray       # edge mass flux
    bernoulli: np.ndarray  # cell Bernoulli potential
    half_depth: np.ndarray # cell T = (h^n + h^k)/4
    pv: np.ndarray         # vertex potential vorticity


@dataclass
class StepInfo:
    newton_iters: int
    increments: list = field(default_factory=list)
    cycle_counts: list = field(default_factory=list)
    diagnostics: Diagnostics | None = None
    s_bar: np.ndarray | None = None
    residual_histories: list = field(default_factory=list)


def _cg(mat, b, rtol=1e-13, maxiter=500):
    """Jacobi-preconditioned CG for SPD sparse mass matrices."""
    dinv = 1.0 / mat.diagonal()
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        ap = mat @ p
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        if np.linalg.norm(r) <= rtol * bnorm:
            return x
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise StateError("conjugate gradient stalled on the weighted vertex mass matrix")


class FineLevelOps:
    """Cached operators and quadrature tables on the dynamics level."""

    def __init__(self, level: MeshLevel):
        self.level = level
        self.m1 = operators.velocity_mass(level).mat
        self.m1_solve = spla.factorized(self.m1.tocsc())
        self.m2_diag = level.cell_areas
        self.div = operators.divergence(level).mat
        self.div_t = self.div.T.tocsr()
        self.m0 = operators.vertex_mass(level).mat
        self.m0_solve = spla.factorized(self.m0.tocsc())
        self.dual_areas = operators.vertex_dual_areas(level)
        # integration weights of the weak-curl functional, hoisted through
        # the symmetric mass solve: dual_areas . M0^-1 r = (M0^-1 dual_areas) . r
        self.curl_weights = self.m0_solve(self.dual_areas)

        q = cell_quadrature(level, 3)
        w0 = eval_basis(SpaceKind.W0L, q.ref)
        w1 = eval_basis(SpaceKind.W1L, q.ref)
        self.w0_vals = w0.values                     # (4, 9)
        self.hat = w1.values[:, :, :]                # (4, 2, 9): L/R x-comp, B/T y-comp
        self.wq = q.wq                               # (ncells, 9)
        self.edges = level.cell_edge_ids
        self.corners = level.cell_vertex_ids
        self._init_weighted_mass_pattern()

    def _init_weighted_mass_pattern(self):
        """Fixed sparsity of the h-weighted vertex mass, refilled per solve."""
        nv = self.level.n_vertices
        verts = self.corners
        rows = np.broadcast_to(verts[:, :, None], (len(verts), 4, 4)).ravel()
        cols = np.broadcast_to(verts[:, None, :], (len(verts), 4, 4)).ravel()
        keys = rows.astype(np.int64) * nv + cols
        uniq, inv = np.unique(keys, return_inverse=True)
        self._wm_inv = inv
        self._wm_mat = sp.csr_matrix(
            (np.zeros(len(uniq)), (uniq // nv, uniq % nv)), shape=(nv, nv))
        # csr from sorted unique coo keeps entry order, so data maps 1:1
        self._wm_nnz = len(uniq)

    def weighted_vertex_mass(self, h):
        if np.any(h <= 0) or not np.all(np.isfinite(h)):
            raise StateError(f"weighted vertex mass needs h > 0; min(h) = {h.min():g}")
        scale = h * self.level.cell_areas
        vals = (scale[:, None, None] * operators._QLOC[None, :, :]).ravel()
        self._wm_mat.data = np.bincount(self._wm_inv, weights=vals,
                                        minlength=self._wm_nnz)
        return self._wm_mat

    def _edge_scatter(self, v0, v1, v2, v3):
        n = self.level.n_edges
        e = self.edges
        return (np.bincount(e[:, 0], v0, minlength=n)
                + np.bincount(e[:, 1], v1, minlength=n)
                + np.bincount(e[:, 2], v2, minlength=n)
                + np.bincount(e[:, 3], v3, minlength=n))

    # -- pointwise fields at the cell quadrature points -------------------
    def _u_at_q(self, u):
        e = self.edges
        ux = u[e[:, 0], None] * self.hat[0, 0] + u[e[:, 1], None] * self.hat[1, 0]
        uy = u[e[:, 2], None] * self.hat[2, 1] + u[e[:, 3], None] * self.hat[3, 1]
        return ux, uy

    def flux_projection_rhs(self, hn, un, hk, uk, uq=None):
        """Right side of the mass-flux projection (Simpson average of h u)."""
        (unx, uny), (ukx, uky) = uq if uq else (self._u_at_q(un), self._u_at_q(uk))
        cn = ((2.0 * hn + hk) / 6.0)[:, None]
        ck = ((hn + 2.0 * hk) / 6.0)[:, None]
        gx = self.wq * (cn * unx + ck * ukx)
        gy = self.wq * (cn * uny + ck * uky)
        return self._edge_scatter((gx * self.hat[0, 0]).sum(axis=1),
                                  (gx * self.hat[1, 0]).sum(axis=1),
                                  (gy * self.hat[2, 1]).sum(axis=1),
                                  (gy * self.hat[3, 1]).sum(axis=1))

    def kinetic_average(self, un, uk, uq=None):
        """Cell averages of (u.u + u^n.u^{n+1} terms)/6, the Bernoulli kinetic part."""
        (unx, uny), (ukx, uky) = uq if uq else (self._u_at_q(un), self._u_at_q(uk))
        kq = (unx * unx + uny * uny + unx * ukx + uny * uky
              + ukx * ukx + uky * uky) / 6.0
        return (self.wq * kq).sum(axis=1) / self.level.cell_areas

    def rotational_rhs(self, pv, flux):
        """Edge integrals of v . (q zhat x F) (assembled fresh each iteration)."""
        qv = pv[self.corners].T  # (4, ncells)
        qq = self.wq * np.einsum("kc,kq->cq", qv, self.w0_vals)
        fx, fy = self._u_at_q(flux)
        qfx = qq * fx
        qfy = qq * fy
        return self._edge_scatter(-(qfy * self.hat[0, 0]).sum(axis=1),
                                  -(qfy * self.hat[1, 0]).sum(axis=1),
                                  (qfx * self.hat[2, 1]).sum(axis=1),
                                  (qfx * self.hat[3, 1]).sum(axis=1))

    def kinetic_energy(self, u, h):
        ux, uy = self._u_at_q(u)
        return 0.5 * float((h[:, None] * self.wq * (ux * ux + uy * uy)).sum())

    def weak_curl(self, u):
        """Relative vorticity in the vertex space (plain mass solve)."""
        return _cg(self.m0, operators.perp_grad_apply(self.level, u))


class Model:
    """One configured solver instance bound to a hierarchy."""

    def __init__(self, hierarchy: MeshHierarchy, scheme: BuoyancyScheme,
                 alpha: float, coriolis: float, dt: float,
                 solver_params: krylov_mg.SolverParams | None = None,
                 newton_mode: str = "tol", newton_tol: float = 1e-12,
                 newton_max: int = 30):
        self.hierarchy = hierarchy
        self.scheme = scheme
        self.alpha = float(alpha)
        self.coriolis = float(coriolis)
        self.dt = float(dt)
        self.params = solver_params or krylov_mg.SolverParams()
        if newton_mode not in ("tol", "fixed4"):
            raise ValueError(f"newton_mode must be 'tol' or 'fixed4', got {newton_mode!r}")
        self.newton_mode = newton_mode
        self.newton_tol = newton_tol
        self.newton_max = newton_max

        self.fine = FineLevelOps(hierarchy.fine)
        self.transport = None
        self.dofmap = None
        if scheme.high_order:
            self.dofmap = build_dofmap(hierarchy, Space(SpaceKind.W2H, hierarchy.dg_index))
            self.transport = TransportOperator(hierarchy, self.dofmap)

        self.g_mean = None
        self.h_mean = None
        self.systems = None
        self.transfers = None

    # ------------------------------------------------------------------
    def set_reference_state(self, state: State) -> None:
        """Fix the Jacobian's mean buoyancy and depth from the initial state."""
        state.validate()
        areas = self.fine.m2_diag
        self.h_mean = float(areas @ state.h / areas.sum())
        self.g_mean = float(areas @ (state.S / state.h) / areas.sum())
        self.systems = krylov_mg.build_block_systems(
            self.hierarchy, self.g_mean, self.h_mean, self.dt)
        self.transfers = krylov_mg.build_transfers(self.hierarchy)

    # ------------------------------------------------------------------
    def diagnose_s(self, h: np.ndarray, S: np.ndarray) -> np.ndarray:
        """High-order buoyancy from the cell prognostics (diagonal solve)."""
        if np.any(h <= 0):
            raise StateError("cannot diagnose buoyancy with non-positive depth")
        return (S / h)[self.dofmap.w2h_to_fine]

    def project_low(self, s: np.ndarray) -> np.ndarray:
        """Collocation projection of a high-order buoyancy to the fine cells."""
        return s[self.dofmap.fine_to_w2h]

    # ------------------------------------------------------------------
    def compute_diagnostics(self, sn: State, sk: State) -> Diagnostics:
        f = self.fine
        uq = (f._u_at_q(sn.u), f._u_at_q(sk.u))
        flux = f.m1_solve(f.flux_projection_rhs(sn.h, sn.u, sk.h, sk.u, uq))
        bern = f.kinetic_average(sn.u, sk.u, uq) + 0.25 * (sn.S + sk.S)
        half_depth = 0.25 * (sn.h + sk.h)
        hbar = 0.5 * (sn.h + sk.h)
        wmass = f.weighted_vertex_mass(hbar)
        rhs = 0.5 * operators.perp_grad_apply(f.level, sn.u + sk.u) \
            + self.coriolis * f.dual_areas
        pv = _cg(wmass, rhs)
        return Diagnostics(flux, bern, half_depth, pv)

    def s_bar(self, sn: State, sk: State, s_high_new: np.ndarray | None) -> np.ndarray:
        if self.scheme.high_order:
            return 0.5 * (self.project_low(sn.s_high) + self.project_low(s_high_new))
        return 0.5 * (sn.S / sn.h + sk.S / sk.h)

    # ------------------------------------------------------------------
    def assemble_residuals(self, sn: State, sk: State, diag: Diagnostics,
                           s_bar: np.ndarray):
        f = self.fine
        dt = self.dt
        lvl = f.level
        skew = self.scheme.skew
        ncells = lvl.n_cells
        minus, plus, _, length = lvl.edge_arrays
        smean = 0.5 * (s_bar[plus] + s_bar[minus])
        sjump = s_bar[plus] - s_bar[minus]
        tbar = diag.half_depth
        tjump = tbar[plus] - tbar[minus]
        tmean = 0.5 * (tbar[plus] + tbar[minus])

        # momentum facet coupling (the pressure-gradient side of the pair)
        if skew:
            buoy_u = length * (0.5 * smean * tjump - 0.5 * sjump * tmean) \
                - 0.5 * (f.div_t @ (s_bar * tbar))
        else:
            buoy_u = length * smean * tjump
        r_u = f.m1 @ (sk.u - sn.u) + dt * (
            f.rotational_rhs(diag.pv, diag.flux) - f.div_t @ diag.bernoulli + buoy_u)

        div_flux = f.div @ diag.flux
        r_h = f.m2_diag * (sk.h - sn.h) + dt * div_flux

        # buoyancy facet coupling (minus the transpose of the momentum one)
        w = length * diag.flux
        if skew:
            we = 0.5 * smean * w
            buoy_s = np.bincount(minus, we, minlength=ncells) \
                - np.bincount(plus, we, minlength=ncells)
            wj = 0.25 * sjump * w
            buoy_s += np.bincount(minus, wj, minlength=ncells) \
                + np.bincount(plus, wj, minlength=ncells)
            buoy_s += 0.5 * s_bar * div_flux
        else:
            we = smean * w
            buoy_s = np.bincount(minus, we, minlength=ncells) \
                - np.bincount(plus, we, minlength=ncells)
        if self.scheme == BuoyancyScheme.LOW_SKEW_UPWIND:
            wu = np.abs(diag.flux) * length * sjump
            buoy_s += np.bincount(plus, wu, minlength=ncells) \
                - np.bincount(minus, wu, minlength=ncells)
        r_s = f.m2_diag * (sk.S - sn.S) + dt * buoy_s
        return r_u, r_h, r_s

    # ------------------------------------------------------------------
    def _norm_u(self, v):
        return float(np.sqrt(v @ (self.fine.m1 @ v)))

    def _norm_c(self, v):
        return float(np.sqrt(self.fine.m2_diag @ (v * v)))

    def newton_step(self, sn: State, sk: State):
        """One quasi-Newton pass: diagnostics, transport, residuals, update."""
        diag = self.compute_diagnostics(sn, sk)
        s_high_new = None
        if self.scheme.high_order:
            hbar_fine = 0.5 * (sn.h + sk.h)
            s_high_new = self.transport.rk3_step(
                sn.s_high, diag.flux, hbar_fine, self.dt, self.alpha)
        sbar = self.s_bar(sn, sk, s_high_new)
        res = self.assemble_residuals(sn, sk, diag, sbar)
        du, dh, ds, hist = krylov_mg.solve_newton_update(
            self.systems, self.transfers, res, self.params)
        new = State(sk.u + du, sk.h + dh, sk.S + ds, s_high_new)
        new.validate()
        rel = max(
            self._norm_u(du) / max(self._norm_u(sk.u), 1e-300),
            self._norm_c(dh) / max(self._norm_c(sk.h), 1e-300),
            self._norm_c(ds) / max(self._norm_c(sk.S), 1e-300),
        )
        return new, rel, diag, sbar, hist

    def advance(self, sn: State) -> tuple[State, StepInfo]:
        """Advance one time step; the high-order buoyancy restarts from the
        cell prognostics and the transport is re-run at every Newton pass."""
        if self.systems is None:
            raise StateError("set_reference_state must run before advancing")
        sn.validate()
        if self.scheme.high_order:
            sn = State(sn.u, sn.h, sn.S, self.diagnose_s(sn.h, sn.S))
        sk = sn.copy()
        info = StepInfo(0)
        while True:
            sk, rel, diag, sbar, hist = self.newton_step(sn, sk)
            info.newton_iters += 1
            info.increments.append(rel)
            info.cycle_counts.append(len(hist) - 1)
            info.residual_histories.append(hist)
            info.diagnostics = diag
            info.s_bar = sbar
            if self.newton_mode == "fixed4":
                if info.newton_iters >= 4:
                    break
            elif rel < self.newton_tol or info.newton_iters >= self.newton_max:
                break
        if not self.scheme.high_order:
            sk.s_high = None
        return sk, info

    # ------------------------------------------------------------------
    # integral diagnostics
    # ------------------------------------------------------------------
    def total_mass(self, state: State) -> float:
        return float(self.fine.m2_diag @ state.h)

    def total_buoyancy(self, state: State) -> float:
        return float(self.fine.m2_diag @ state.S)

    def energy(self, state: State) -> float:
        pot = 0.5 * float(self.fine.m2_diag @ (state.h * state.S))
        return self.fine.kinetic_energy(state.u, state.h) + pot

    def tracer_variance(self, state: State) -> float:
        if self.scheme.high_order and state.s_high is not None:
            s_cells = self.project_low(state.s_high)
        else:
            s_cells = state.S / state.h
        return 0.5 * float(self.fine.m2_diag @ (state.h * s_cells * s_cells))

    def total_vorticity(self, state: State) -> float:
        rhs = operators.perp_grad_apply(self.fine.level, state.u)
        return float(self.fine.curl_weights @ rhs)

    def upwind_energy_production(self, diag: Diagnostics, s_bar: np.ndarray) -> float:
        """Energy lost per step by the low-order upwind term (no adjoint)."""
        lvl = self.fine.level
        minus, plus, _, length = lvl.edge_arrays
        sj = s_bar[plus] - s_bar[minus]
        tbar = diag.half_depth
        tj = tbar[plus] - tbar[minus]
        return -self.dt * float(np.sum(np.abs(diag.flux) * length * sj * tj))
