"""High-order material transport of buoyancy on the collocated DG mesh.

The spatial operator is the average of the weak-divergence and strong
advective forms with central facet fluxes, minus the compressibility
term, plus an optional upwind-flux jump penalty (alpha = 1 upwinds,
alpha = 0 is centered):

    R(chi; s) = -1/2 int grad(chi) . F s  + 1/2 int chi F . grad(s)
                -1/2 int chi s div(F)
                -1/2 int [chi]{s} F.n     + 1/2 int {chi}[s] F.n
                +alpha int (|F.n|/2) [chi][s]

The half-jump penalty is the classical upwind numerical flux; its
variance sink is alpha * int (|F.n|/2) [s]^2, reported by the audit as
``facet_dissipation``. Anything stronger is outside the stability
region of the explicit three-stage integrator at the operating CFL.

so that the semi-discrete system is M_hbar ds/dt = -R(s). The carrier
flux F lives on the fine level (one div-conforming patch per fine cell),
so volume terms are integrated with a Gauss rule per fine sub-cell and
facet terms with a Gauss rule per fine edge segment; every integral is
then exact, which makes total buoyancy conservation (for pointwise
divergence-free F) and the variance-production identity hold to
round-off. The h-weighted mass matrix uses the collocation rule and is
diagonal: one entry per fine cell, equal to cell area times depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import MeshHierarchy, StateError
from .spaces import DofMap, lagrange_derivs, lagrange_values


@dataclass
class TransportAudit:
    total_buoyancy: float
    variance: float
    facet_dissipation: float


@dataclass
class PreparedFlux:
    """Flux-dependent quadrature data, reusable while the flux is frozen."""
    flux: np.ndarray
    fx_q: np.ndarray       # (nelem, 256) x-flux at volume points
    fy_q: np.ndarray
    div_q: np.ndarray      # (nelem, 256) divergence at volume points
    fn: tuple              # per facet direction: (nfac, 16) normal flux
    vol_blocks: np.ndarray | None = None   # (nelem, 16, 16) assembled volume op
    coeffs: tuple | None = None            # weighted volume coefficient arrays


class TransportOperator:
    """Geometry-bound tables for the DG transport right-hand side."""

    def __init__(self, hierarchy: MeshHierarchy, dofmap: DofMap):
        self.hierarchy = hierarchy
        self.dofmap = dofmap
        dg = hierarchy.dg
        fine = hierarchy.fine
        self.n_elem = dg.n_cells
        nxd, nyd = dg.nx, dg.ny
        nxf, nyf = fine.nx, fine.ny
        self.dx_el = dg.lx / nxd
        self.dy_el = dg.ly / nyd
        jac = 0.25 * self.dx_el * self.dy_el

        nodes, glw = hierarchy.gl_points, hierarchy.gl_weights
        # sub-cell boundaries of the weight partition in reference coords
        cbnd = np.concatenate([[-1.0], -1.0 + np.cumsum(glw)])
        cbnd[-1] = 1.0

        # 1D quadrature: 4 Gauss points per sub-cell (16 per element side)
        sub = np.repeat(np.arange(4), 4)
        centre = 0.5 * (cbnd[sub] + cbnd[sub + 1])
        half = 0.5 * (cbnd[sub + 1] - cbnd[sub])
        x1 = centre + half * np.tile(nodes, 4)
        w1 = half * np.tile(glw, 4)
        hat_lo = (cbnd[sub + 1] - x1) / (cbnd[sub + 1] - cbnd[sub])
        hat_hi = (x1 - cbnd[sub]) / (cbnd[sub + 1] - cbnd[sub])
        self._sub1, self._x1, self._w1 = sub, x1, w1

        # tensor volume points, q = iy*16 + ix
        ix = np.tile(np.arange(16), 16)
        iy = np.repeat(np.arange(16), 16)
        self.qa = sub[ix]
        self.qb = sub[iy]
        self.loc_cell = self.qb * 4 + self.qa
        self.w_q = w1[ix] * w1[iy] * jac
        self.hat_xl, self.hat_xr = hat_lo[ix], hat_hi[ix]
        self.hat_yb, self.hat_yt = hat_lo[iy], hat_hi[iy]

        lv = lagrange_values(nodes, x1)    # (4, 16)
        ld = lagrange_derivs(nodes, x1)
        # volume points are ordered q = iy*16 + ix, so flatten (y, x)
        self.basis = np.einsum("ax,by->bayx", lv, lv).reshape(16, 256)
        self.basis_dx = np.einsum("ax,by->bayx", ld, lv).reshape(16, 256) * (2.0 / self.dx_el)
        self.basis_dy = np.einsum("ax,by->bayx", lv, ld).reshape(16, 256) * (2.0 / self.dy_el)
        # 1D factors for sum-factorised contractions (dofs (b,a), points (y,x))
        self.lv1 = np.ascontiguousarray(lv)                      # (4, 16)
        self.ld1x = np.ascontiguousarray(ld * (2.0 / self.dx_el))
        self.ld1y = np.ascontiguousarray(ld * (2.0 / self.dy_el))
        self.lv1_t = np.ascontiguousarray(lv.T)
        self.ld1y_t = np.ascontiguousarray(self.ld1y.T)

        # element-local gathers of the fine edge dofs
        ei, ej = np.meshgrid(np.arange(nxd), np.arange(nyd))
        ei, ej = ei.ravel(), ej.ravel()
        cols = (4 * ei[:, None, None] + np.arange(5)[None, :, None]) % nxf
        rows = 4 * ej[:, None, None] + np.arange(4)[None, None, :]
        self.ex_idx = rows * nxf + cols                       # (nelem, 5, 4)
        rows = (4 * ej[:, None, None] + np.arange(5)[None, :, None]) % nyf
        cols = 4 * ei[:, None, None] + np.arange(4)[None, None, :]
        self.ey_idx = nxf * nyf + rows * nxf + cols           # (nelem, 5, 4)

        self._fine_shape = (nyf, nxf)
        self._fine_dx = fine.dx
        self._fine_dy = fine.dy
        self.areas_w2h = fine.cell_areas[dofmap.w2h_to_fine]

        # facet traces: values of the tensor basis on the element sides
        tl = lagrange_values(nodes, np.array([-1.0]))[:, 0]
        tr = lagrange_values(nodes, np.array([1.0]))[:, 0]
        self.trace_w = w1  # per-point reference weights along a facet
        self.tr_xm = np.einsum("a,by->bay", tr, lv).reshape(16, 16)  # minus side, xi=+1
        self.tr_xp = np.einsum("a,by->bay", tl, lv).reshape(16, 16)  # plus side, xi=-1
        self.tr_ym = np.einsum("ax,b->bax", lv, tr).reshape(16, 16)
        self.tr_yp = np.einsum("ax,b->bax", lv, tl).reshape(16, 16)

        el = (ej * nxd + ei)
        self.vfac_minus = ej * nxd + (ei - 1) % nxd
        self.vfac_plus = el
        self.hfac_minus = ((ej - 1) % nyd) * nxd + ei
        self.hfac_plus = el
        seg = sub[None, :]  # (1, 16)
        self.vfac_edges = (4 * ej[:, None] + seg) * nxf + (4 * ei)[:, None]
        self.hfac_edges = nxf * nyf + (4 * ej)[:, None] * nxf + (4 * ei[:, None] + seg)
        self.wf_x = w1 * (0.5 * self.dy_el)
        self.wf_y = w1 * (0.5 * self.dx_el)

        # physical coordinates of element centres, volume and facet points
        xc = 0.5 * (dg.x_edges[:-1] + dg.x_edges[1:])
        yc = 0.5 * (dg.y_edges[:-1] + dg.y_edges[1:])
        self._el_xc, self._el_yc = xc[ei], yc[ej]
        ix = np.tile(np.arange(16), 16)
        iy = np.repeat(np.arange(16), 16)
        self.xq_phys = self._el_xc[:, None] + 0.5 * self.dx_el * x1[ix][None, :]
        self.yq_phys = self._el_yc[:, None] + 0.5 * self.dy_el * x1[iy][None, :]
        self.vfac_x = dg.x_edges[ei][:, None] * np.ones((1, 16))
        self.vfac_y = self._el_yc[:, None] + 0.5 * self.dy_el * x1[None, :]
        self.hfac_x = self._el_xc[:, None] + 0.5 * self.dx_el * x1[None, :]
        self.hfac_y = dg.y_edges[ej][:, None] * np.ones((1, 16))

    # ------------------------------------------------------------------
    def mass_diag(self, h_fine: np.ndarray) -> np.ndarray:
        """Diagonal of the depth-weighted collocated mass matrix."""
        return self.areas_w2h * h_fine[self.dofmap.w2h_to_fine]

    def fine_divergence(self, flux: np.ndarray) -> np.ndarray:
        """Pointwise divergence per fine cell of an edge-normal flux field."""
        nyf, nxf = self._fine_shape
        fx = flux[:nxf * nyf].reshape(nyf, nxf)
        fy = flux[nxf * nyf:].reshape(nyf, nxf)
        div = (np.roll(fx, -1, axis=1) - fx) / self._fine_dx[None, :]
        div += (np.roll(fy, -1, axis=0) - fy) / self._fine_dy[:, None]
        return div.ravel()

    def prepare_flux(self, flux: np.ndarray, assemble: bool = False) -> PreparedFlux:
        """Gather the flux to quadrature points once per frozen-flux phase.

        With ``assemble=True`` the volume operator is condensed into one
        dense 16x16 block per element, which pays off when many steps run
        against the same flux (the stand-alone advection mode).
        """
        ex = flux[self.ex_idx]
        ey = flux[self.ey_idx]
        # expand the per-sub-cell edge values to the 16x16 point grid
        # (q = iy*16 + ix) and blend with the sub-cell hat functions
        exl = np.repeat(np.repeat(ex[:, :4, :].transpose(0, 2, 1), 4, axis=1), 4, axis=2)
        exr = np.repeat(np.repeat(ex[:, 1:, :].transpose(0, 2, 1), 4, axis=1), 4, axis=2)
        n2 = (self.n_elem, 256)
        fx_q = exl.reshape(n2) * self.hat_xl + exr.reshape(n2) * self.hat_xr
        eyb = np.repeat(np.repeat(ey[:, :4, :], 4, axis=1), 4, axis=2)
        eyt = np.repeat(np.repeat(ey[:, 1:, :], 4, axis=1), 4, axis=2)
        fy_q = eyb.reshape(n2) * self.hat_yb + eyt.reshape(n2) * self.hat_yt
        dv = self.fine_divergence(flux)[self.dofmap.w2h_to_fine]
        div_q = dv.reshape(self.n_elem, 16)[:, self.loc_cell]
        fn = (flux[self.vfac_edges], flux[self.hfac_edges])
        pf = PreparedFlux(flux, fx_q, fy_q, div_q, fn)
        self._finish_prepare(pf, assemble)
        return pf

    def prepare_analytic_flux(self, flux_fn, assemble: bool = False) -> PreparedFlux:
        """Sample an analytic carrier flux at the quadrature points.

        Used by the stand-alone advection mode, where the flux is a given
        divergence-free vector field rather than a discrete edge field.
        """
        fx_q, fy_q = flux_fn(self.xq_phys, self.yq_phys)
        fn_x, _ = flux_fn(self.vfac_x, self.vfac_y)
        _, fn_y = flux_fn(self.hfac_x, self.hfac_y)
        pf = PreparedFlux(None, np.asarray(fx_q, dtype=float),
                          np.asarray(fy_q, dtype=float),
                          np.zeros_like(fx_q), (fn_x, fn_y))
        self._finish_prepare(pf, assemble)
        return pf

    def _finish_prepare(self, pf: PreparedFlux, assemble: bool) -> None:
        w = self.w_q
        pf.coeffs = (-0.5 * w * pf.fx_q, -0.5 * w * pf.fy_q,
                     0.5 * w * pf.fx_q, 0.5 * w * pf.fy_q,
                     -0.5 * w * pf.div_q)
        if assemble:
            a_gx, a_gy, a_ax, a_ay, a_d = pf.coeffs
            blocks = np.empty((self.n_elem, 16, 16))
            b, bx, by = self.basis, self.basis_dx, self.basis_dy
            for k in range(16):
                row = (a_gx * bx[k] + a_gy * by[k] + a_d * b[k]) @ b.T
                row += (a_ax * b[k]) @ bx.T
                row += (a_ay * b[k]) @ by.T
                blocks[:, k, :] = row
            pf.vol_blocks = blocks
            pf.coeffs = None  # spare the memory; the blocks carry everything

    def spatial_rhs(self, s: np.ndarray, flux, alpha: float) -> np.ndarray:
        """Dual vector R(s); the semi-discrete system is M ds/dt = -R."""
        pf = flux if isinstance(flux, PreparedFlux) else self.prepare_flux(flux)
        s_loc = s.reshape(self.n_elem, 16)
        if pf.vol_blocks is not None:
            r = np.matmul(pf.vol_blocks, s_loc[:, :, None])[:, :, 0]
        else:
            # sum-factorised: dof cube (e, 4b, 4a) -> point grid (e, 16y, 16x)
            s4 = s_loc.reshape(self.n_elem, 4, 4)
            t_v = np.matmul(s4, self.lv1)            # (e, 4b, 16x)
            t_d = np.matmul(s4, self.ld1x)
            sv = np.matmul(self.lv1_t, t_v)          # (e, 16y, 16x)
            sx = np.matmul(self.lv1_t, t_d)
            sy = np.matmul(self.ld1y_t, t_v)
            a_gx, a_gy, a_ax, a_ay, a_d = pf.coeffs
            flat = (self.n_elem, 256)
            cube = (self.n_elem, 16, 16)
            g_x = (a_gx * sv.reshape(flat)).reshape(cube)
            g_y = (a_gy * sv.reshape(flat)).reshape(cube)
            g_0 = (a_ax * sx.reshape(flat) + a_ay * sy.reshape(flat)
                   + a_d * sv.reshape(flat)).reshape(cube)
            # adjoint contractions back to the dof cube
            r = np.matmul(self.lv1, np.matmul(g_x, self.ld1x.T))
            r += np.matmul(self.ld1y, np.matmul(g_y, self.lv1_t))
            r += np.matmul(self.lv1, np.matmul(g_0, self.lv1_t))
            r = r.reshape(self.n_elem, 16)

        for (minus, plus, trm, trp, wf), fn in zip((
            (self.vfac_minus, self.vfac_plus, self.tr_xm, self.tr_xp, self.wf_x),
            (self.hfac_minus, self.hfac_plus, self.tr_ym, self.tr_yp, self.wf_y),
        ), pf.fn):
            sm = s_loc[minus] @ trm
            sp = s_loc[plus] @ trp
            jump = sp - sm
            pen = 0.5 * alpha * np.abs(fn) * jump
            r[minus] += (wf * (0.5 * fn * sp - pen)) @ trm.T
            r[plus] += (wf * (-0.5 * fn * sm + pen)) @ trp.T
        return r.ravel()

    def facet_dissipation(self, s: np.ndarray, flux) -> float:
        """Variance sink of the unit upwind penalty: int (|F.n|/2) [s]^2 dGamma."""
        pf = flux if isinstance(flux, PreparedFlux) else self.prepare_flux(flux)
        s_loc = s.reshape(self.n_elem, 16)
        total = 0.0
        for (minus, plus, trm, trp, wf), fn in zip((
            (self.vfac_minus, self.vfac_plus, self.tr_xm, self.tr_xp, self.wf_x),
            (self.hfac_minus, self.hfac_plus, self.tr_ym, self.tr_yp, self.wf_y),
        ), pf.fn):
            jump = s_loc[plus] @ trp - s_loc[minus] @ trm
            total += float((wf * 0.5 * np.abs(fn) * jump ** 2).sum())
        return total

    def rk3_step(self, s: np.ndarray, flux, h_fine: np.ndarray,
                 dt: float, alpha: float) -> np.ndarray:
        """One strong-stability third-order Runge-Kutta step with frozen operands."""
        mdiag = self.mass_diag(h_fine)
        pf = flux if isinstance(flux, PreparedFlux) else self.prepare_flux(flux)

        def rate(v):
            return -self.spatial_rhs(v, pf, alpha) / mdiag

        s1 = s + dt * rate(s)
        if not np.all(np.isfinite(s1)):
            raise StateError("transport blow-up in Runge-Kutta stage 1")
        s2 = 0.75 * s + 0.25 * (s1 + dt * rate(s1))
        if not np.all(np.isfinite(s2)):
            raise StateError("transport blow-up in Runge-Kutta stage 2")
        out = s / 3.0 + (2.0 / 3.0) * (s2 + dt * rate(s2))
        if not np.all(np.isfinite(out)):
            raise StateError("transport blow-up in Runge-Kutta stage 3")
        return out

    def audit(self, s: np.ndarray, flux, h_fine: np.ndarray) -> TransportAudit:
        mdiag = self.mass_diag(h_fine)
        return TransportAudit(
            total_buoyancy=float(mdiag @ s),
            variance=0.5 * float(mdiag @ (s * s)),
            facet_dissipation=self.facet_dissipation(s, flux),
        )
