"""Entrywise checks of every assembled operator against dense oracles.

The oracles below re-derive each bilinear form from basis-function
definitions with a brute-force tensor Gauss rule per cell, sharing no
assembly code with the package.
"""

import io

import numpy as np
import pytest

from thermalsw import operators
from thermalsw.mesh import MeshLevel, StateError, build_hierarchy

GL8 = np.polynomial.legendre.leggauss(8)


def cell_quad(level, i, j):
    p, w = GL8
    x0, x1 = level.x_edges[i], level.x_edges[i + 1]
    y0, y1 = level.y_edges[j], level.y_edges[j + 1]
    xs = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * p
    ys = 0.5 * (y0 + y1) + 0.5 * (y1 - y0) * p
    X, Y = np.meshgrid(xs, ys)
    W = 0.25 * (x1 - x0) * (y1 - y0) * np.outer(w, w)
    return X.ravel(), Y.ravel(), W.ravel()


def w1_basis_fns(level, i, j):
    """The four edge-local velocity bases on cell (i, j): callables and divs."""
    x0, x1 = level.x_edges[i], level.x_edges[i + 1]
    y0, y1 = level.y_edges[j], level.y_edges[j + 1]
    dx, dy = x1 - x0, y1 - y0
    return [
        (lambda x, y: ((x1 - x) / dx, 0.0 * x), -1.0 / dx),   # left
        (lambda x, y: ((x - x0) / dx, 0.0 * x), 1.0 / dx),    # right
        (lambda x, y: (0.0 * x, (y1 - y) / dy), -1.0 / dy),   # bottom
        (lambda x, y: (0.0 * x, (y - y0) / dy), 1.0 / dy),    # top
    ]


def w0_basis_fns(level, i, j):
    x0, x1 = level.x_edges[i], level.x_edges[i + 1]
    y0, y1 = level.y_edges[j], level.y_edges[j + 1]
    dx, dy = x1 - x0, y1 - y0
    hx = [lambda x: (x1 - x) / dx, lambda x: (x - x0) / dx]
    hy = [lambda y: (y1 - y) / dy, lambda y: (y - y0) / dy]
    return [(lambda x, y, a=a, b=b: hx[a](x) * hy[b](y)) for b in range(2) for a in range(2)]


def dense_velocity_mass(level):
    n = level.n_edges
    out = np.zeros((n, n))
    edges = level.cell_edge_ids
    for c in range(level.n_cells):
        i, j = c % level.nx, c // level.nx
        X, Y, W = cell_quad(level, i, j)
        fns = w1_basis_fns(level, i, j)
        for a in range(4):
            va = fns[a][0](X, Y)
            for b in range(4):
                vb = fns[b][0](X, Y)
                out[edges[c, a], edges[c, b]] += (W * (va[0] * vb[0] + va[1] * vb[1])).sum()
    return out


def dense_divergence(level):
    out = np.zeros((level.n_cells, level.n_edges))
    edges = level.cell_edge_ids
    for c in range(level.n_cells):
        i, j = c % level.nx, c // level.nx
        _, _, W = cell_quad(level, i, j)
        fns = w1_basis_fns(level, i, j)
        for a in range(4):
            out[c, edges[c, a]] += W.sum() * fns[a][1]
    return out


def dense_weighted_vertex_mass(level, h):
    n = level.n_vertices
    out = np.zeros((n, n))
    verts = level.cell_vertex_ids
    for c in range(level.n_cells):
        i, j = c % level.nx, c // level.nx
        X, Y, W = cell_quad(level, i, j)
        fns = w0_basis_fns(level, i, j)
        for a in range(4):
            pa = fns[a](X, Y)
            for b in range(4):
                out[verts[c, a], verts[c, b]] += h[c] * (W * pa * fns[b](X, Y)).sum()
    return out


def dense_perp_grad(level, u_eval):
    """Oracle for the grad-perp pairing: int (d_y psi, -d_x psi) . u."""
    out = np.zeros(level.n_vertices)
    verts = level.cell_vertex_ids
    eps = 1e-6
    for c in range(level.n_cells):
        i, j = c % level.nx, c // level.nx
        X, Y, W = cell_quad(level, i, j)
        fns = w0_basis_fns(level, i, j)
        ux, uy = u_eval(c, X, Y)
        for a in range(4):
            dpy = (fns[a](X, Y + eps) - fns[a](X, Y - eps)) / (2 * eps)
            dpx = (fns[a](X + eps, Y) - fns[a](X - eps, Y)) / (2 * eps)
            out[verts[c, a]] += (W * (dpy * ux - dpx * uy)).sum()
    return out


def rt_eval_factory(level, u):
    nxy = level.nx * level.ny

    def u_eval(c, X, Y):
        i, j = c % level.nx, c // level.nx
        x0, x1 = level.x_edges[i], level.x_edges[i + 1]
        y0, y1 = level.y_edges[j], level.y_edges[j + 1]
        ul = u[j * level.nx + i]
        ur = u[j * level.nx + (i + 1) % level.nx]
        vb = u[nxy + j * level.nx + i]
        vt = u[nxy + ((j + 1) % level.ny) * level.nx + i]
        ux = ul * (x1 - X) / (x1 - x0) + ur * (X - x0) / (x1 - x0)
        uy = vb * (y1 - Y) / (y1 - y0) + vt * (Y - y0) / (y1 - y0)
        return ux, uy

    return u_eval


def make_level(n, uniform=True, seed=0):
    if uniform:
        return MeshLevel(np.linspace(0, 1.5, n + 1), np.linspace(0, 1.0, n + 1))
    rng = np.random.default_rng(seed)
    x = np.concatenate([[0], np.cumsum(rng.uniform(0.5, 1.5, n))])
    y = np.concatenate([[0], np.cumsum(rng.uniform(0.5, 1.5, n))])
    return MeshLevel(x, y)


@pytest.mark.parametrize("n,uniform", [(2, True), (3, True), (3, False)])
class TestDenseOracles:
    def test_velocity_mass(self, n, uniform):
        lv = make_level(n, uniform)
        mat = operators.velocity_mass(lv).to_dense()
        ref = dense_velocity_mass(lv)
        assert np.abs(mat - ref).max() < 1e-13
        assert np.abs(mat - mat.T).max() < 1e-13

    def test_cell_mass(self, n, uniform):
        lv = make_level(n, uniform)
        mat = operators.cell_mass(lv).to_dense()
        assert np.allclose(np.diag(mat), lv.cell_areas, atol=1e-14)
        assert np.abs(mat - np.diag(np.diag(mat))).max() == 0.0
        assert np.diag(mat).sum() == pytest.approx(lv.area, abs=1e-13)

    def test_divergence(self, n, uniform):
        lv = make_level(n, uniform)
        mat = operators.divergence(lv).to_dense()
        ref = dense_divergence(lv)
        assert np.abs(mat - ref).max() < 1e-13
        assert np.abs(mat.sum(axis=0)).max() < 1e-13  # periodic column sums

    def test_weighted_vertex_mass(self, n, uniform):
        lv = make_level(n, uniform)
        rng = np.random.default_rng(42)
        h = rng.uniform(0.5, 2.0, lv.n_cells)
        mat = operators.weighted_vertex_mass(lv, h).to_dense()
        ref = dense_weighted_vertex_mass(lv, h)
        assert np.abs(mat - ref).max() < 1e-13

    def test_perp_grad(self, n, uniform):
        lv = make_level(n, uniform)
        rng = np.random.default_rng(7)
        u = rng.standard_normal(lv.n_edges)
        got = operators.perp_grad_apply(lv, u)
        ref = dense_perp_grad(lv, rt_eval_factory(lv, u))
        assert np.abs(got - ref).max() < 1e-8   # oracle uses FD gradients


class TestMassProperties:
    def test_velocity_mass_spd(self):
        lv = make_level(4)
        m = operators.velocity_mass(lv).mat
        rng = np.random.default_rng(3)
        for _ in range(5):
            x = rng.standard_normal(lv.n_edges)
            assert x @ (m @ x) > 0

    def test_single_cell_mass(self):
        # on a one-cell periodic mesh the wrapped edge basis is constant
        lv = MeshLevel(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
        m = operators.velocity_mass(lv).to_dense()
        assert m.shape == (2, 2)
        assert np.allclose(np.diag(m), 1.0)
        assert m[0, 0] > 0 and m[1, 1] > 0

    def test_weighted_mass_linear_in_weight(self):
        lv = make_level(2)
        ones = np.ones(lv.n_cells)
        m1 = operators.weighted_vertex_mass(lv, ones).to_dense()
        m2 = operators.weighted_vertex_mass(lv, 2 * ones).to_dense()
        assert np.allclose(m2, 2 * m1, atol=1e-14)

    def test_weighted_mass_rejects_nonpositive(self):
        lv = make_level(2)
        h = np.ones(lv.n_cells)
        h[1] = -0.5
        with pytest.raises(StateError):
            operators.weighted_vertex_mass(lv, h)

    def test_gl_partition_cell_mass(self):
        h = build_hierarchy(2.0, 8, 3)
        fine, dg = h.fine, h.dg
        m = operators.cell_mass(fine).mat.diagonal()
        el_area = (dg.lx / dg.nx) * (dg.ly / dg.ny)
        wx = np.tile(h.gl_weights, dg.nx)
        expect = np.outer(np.tile(h.gl_weights, dg.ny), wx).ravel() * el_area / 4.0
        assert np.allclose(m, expect, atol=1e-15)
        assert m.sum() == pytest.approx(fine.area, abs=1e-13)


class TestDivergenceAction:
    def test_uniform_flux_divergence_free(self):
        lv = make_level(3)
        d = operators.divergence(lv).mat
        u = np.concatenate([np.full(lv.n_xedges, 2.5), np.full(lv.n_xedges, -1.0)])
        assert np.abs(d @ u).max() < 1e-13

    def test_single_edge_flux_balance(self):
        lv = make_level(3)
        d = operators.divergence(lv).mat
        u = np.zeros(lv.n_edges)
        u[4] = 1.0  # one vertical edge, unit normal velocity
        r = d @ u
        minus, plus, _, length = lv.edge_arrays
        assert r[plus[4]] == pytest.approx(-length[4])
        assert r[minus[4]] == pytest.approx(length[4])
        assert np.count_nonzero(r) == 2


class TestPerpGrad:
    def test_constant_field_annihilated(self):
        lv = make_level(3, uniform=False)
        u = np.concatenate([np.full(lv.n_xedges, 1.3), np.full(lv.n_xedges, -0.4)])
        assert np.abs(operators.perp_grad_apply(lv, u)).max() < 1e-13

    def test_total_circulation_vanishes(self):
        lv = make_level(4)
        rng = np.random.default_rng(11)
        u = rng.standard_normal(lv.n_edges)
        assert abs(operators.perp_grad_apply(lv, u).sum()) < 1e-12

    def test_symmetric_pairing_with_stream_functions(self):
        # u = grad-perp(psi') lies in the edge space; the pairing reduces to
        # the symmetric form int grad-perp(psi) . grad-perp(psi')
        lv = make_level(4)
        nv = lv.n_vertices
        rng = np.random.default_rng(12)
        mat = np.zeros((nv, nv))
        for k in range(nv):
            psi = np.zeros(nv)
            psi[k] = 1.0
            P = psi.reshape(lv.ny, lv.nx)
            u = np.empty(lv.n_edges)
            u[:lv.n_xedges] = ((np.roll(P, -1, axis=0) - P) / lv.dy[:, None]).ravel()
            u[lv.n_xedges:] = (-(np.roll(P, -1, axis=1) - P) / lv.dx[None, :]).ravel()
            mat[:, k] = operators.perp_grad_apply(lv, u)
        assert np.abs(mat - mat.T).max() < 1e-12


class TestFacetCouplings:
    def test_constant_fields_vanish(self):
        lv = make_level(3, uniform=False)
        s = np.full(lv.n_cells, 2.0)
        t = np.full(lv.n_cells, 5.0)
        assert np.abs(operators.facet_buoyancy_gradient(lv, s).mat @ t).max() < 1e-13
        u = np.ones(lv.n_edges)
        assert np.abs(operators.facet_buoyancy_flux(lv, s).mat @ u).max() < 1e-12

    def test_two_cell_hand_value(self):
        # two cells in x: s = (1, 3), T = (0, 2); on the shared unit edge the
        # coupling is length * mean(s) * jump(T) = 1 * 2 * 2 = 4
        lv = MeshLevel(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0]))
        s = np.array([1.0, 3.0])
        t = np.array([0.0, 2.0])
        vec = operators.facet_buoyancy_gradient(lv, s).mat @ t
        # edge 0 (x=0, wraps): jump = t0 - t1 = -2, mean 2 -> -4
        # edge 1 (x=1): jump = t1 - t0 = +2, mean 2 -> +4
        assert vec[0] == pytest.approx(-4.0)
        assert vec[1] == pytest.approx(4.0)

    def test_energy_antisymmetry_pair(self):
        # the two facet operators built independently must be exact
        # negative transposes: the discrete energy cancellation
        lv = make_level(3, uniform=False, seed=3)
        rng = np.random.default_rng(13)
        s = rng.standard_normal(lv.n_cells)
        a_u = operators.facet_buoyancy_gradient(lv, s).to_dense()
        a_s = operators.facet_buoyancy_flux(lv, s).to_dense()
        assert np.abs(a_u + a_s.T).max() < 1e-13

    def test_skew_forms_reduce_to_centered(self):
        # with the volume companions, the skew forms equal the centered ones
        lv = make_level(4, uniform=False, seed=5)
        rng = np.random.default_rng(14)
        s = rng.standard_normal(lv.n_cells)
        t = rng.standard_normal(lv.n_cells)
        u = rng.standard_normal(lv.n_edges)
        d = operators.divergence(lv).mat
        grad_c = operators.facet_buoyancy_gradient(lv, s).mat @ t
        grad_s = operators.facet_buoyancy_gradient(lv, s, skew=True).mat @ t \
            - 0.5 * (d.T @ (s * t))
        assert np.abs(grad_c - grad_s).max() < 1e-12
        flux_c = operators.facet_buoyancy_flux(lv, s).mat @ u
        flux_s = operators.facet_buoyancy_flux(lv, s, skew=True).mat @ u \
            + 0.5 * s * (d @ u)
        assert np.abs(flux_c - flux_s).max() < 1e-12

    def test_upwind_penalty_dissipative(self):
        lv = make_level(4, seed=6)
        rng = np.random.default_rng(15)
        s = rng.standard_normal(lv.n_cells)
        fn = rng.standard_normal(lv.n_edges)
        pen = operators.facet_upwind_penalty(lv, fn).mat
        # contraction with s equals the facet sum of |F.n| [s]^2 >= 0
        minus, plus, _, length = lv.edge_arrays
        expect = (np.abs(fn) * length * (s[plus] - s[minus]) ** 2).sum()
        assert s @ (pen @ s) == pytest.approx(expect, rel=1e-12)


def test_operator_dump_roundtrip():
    lv = make_level(2)
    op = operators.cell_mass(lv)
    buf = io.StringIO()
    op.dump(buf)
    buf.seek(0)
    header = buf.readline()
    assert "W2L" in header
    data = np.loadtxt(buf)
    assert np.allclose(data, op.to_dense())
