"""WENO reconstruction: conservation, polynomial exactness, oscillation
indicator and the nonlinear weights."""

import numpy as np
import pytest

from hprale import mesh as mm
from hprale.basis import modal_basis, triangle_quadrature
from hprale.weno import WenoReconstructor, cell_averages_of_function


def polynomial_field(rng, M):
    cexp = rng.standard_normal((M + 1, M + 1))

    def f(x):
        out = np.zeros(len(x))
        for a in range(M + 1):
            for b in range(M + 1 - a):
                out += cexp[a, b] * x[:, 0] ** a * x[:, 1] ** b
        return out[:, None]
    return f


class TestReconstruction:
    def test_constant_data(self):
        m = mm.rectangle_mesh(8, 8)
        w = WenoReconstructor(m, 2)
        Q = np.full((m.n_cells, 4), 3.25)
        co = w.reconstruct(Q)
        assert np.abs(co[:, 0, :] - 3.25).max() < 1e-14
        assert np.abs(co[:, 1:, :]).max() == 0.0
        assert np.all(np.isfinite(w.last_weights))

    @pytest.mark.parametrize("M", [1, 2, 3])
    def test_polynomial_exactness(self, M):
        rng = np.random.default_rng(M)
        m = mm.rectangle_mesh(12, 12)
        w = WenoReconstructor(m, M)
        f = polynomial_field(rng, M)
        Q = cell_averages_of_function(m, f, degree=2 * M)
        co = w.reconstruct(Q)
        cells = rng.integers(0, m.n_cells, 300)
        ref = rng.random((300, 2)) * 0.5
        vals = w.evaluate(co, cells, ref)
        v0, J, _ = m.jacobians()
        phys = v0[cells] + np.einsum("nij,nj->ni", J[cells], ref)
        assert np.abs(vals - f(phys)).max() < 1e-10

    def test_step_data_non_oscillatory(self):
        m = mm.rectangle_mesh(16, 16, periodic_x=True, periodic_y=True)
        w = WenoReconstructor(m, 2)
        Q = cell_averages_of_function(
            m, lambda x: (x[:, 0] > 0.5).astype(float)[:, None]
        )
        co = w.reconstruct(Q)
        pts = np.array([[1 / 3, 1 / 3], [0.1, 0.1], [0.8, 0.1], [0.1, 0.8]])
        vals = w.evaluate(co, np.arange(m.n_cells)[:, None], pts[None, :, :])
        assert np.isfinite(vals).all()
        assert vals.min() > -0.1 and vals.max() < 1.1

    def test_conservation(self):
        rng = np.random.default_rng(11)
        m = mm.rectangle_mesh(9, 9)
        w = WenoReconstructor(m, 2)
        Q = rng.random((m.n_cells, 17))
        co = w.reconstruct(Q)
        # quadrature of the polynomial over its own cell reproduces Q
        pts, qw = triangle_quadrature(6)
        vals = w.evaluate(co, np.arange(m.n_cells)[:, None], pts[None, :, :])
        means = 2.0 * np.einsum("q,cqv->cv", qw, vals)
        assert np.abs(means - Q).max() < 1e-12 * max(1.0, np.abs(Q).max())

    def test_translation_invariance(self):
        rng = np.random.default_rng(12)
        m1 = mm.rectangle_mesh(8, 8)
        m2 = mm.rectangle_mesh(8, 8, x0=5.0, y0=-3.0, x1=6.0, y1=-2.0)
        Q = rng.random((m1.n_cells, 3))
        c1 = WenoReconstructor(m1, 2).reconstruct(Q)
        c2 = WenoReconstructor(m2, 2).reconstruct(Q)
        assert np.abs(c1 - c2).max() < 1e-11

    def test_weights_partition_of_unity(self):
        rng = np.random.default_rng(13)
        m = mm.rectangle_mesh(10, 10)
        w = WenoReconstructor(m, 2)
        Q = rng.random((m.n_cells, 2))
        w.reconstruct(Q)
        om = w.last_weights
        assert om.min() >= 0.0 and om.max() <= 1.0 + 1e-14
        assert np.abs(om.sum(axis=1) - 1.0).max() < 1e-12

    @pytest.mark.parametrize("M", [1, 2, 3])
    def test_central_weight_dominates_on_smooth_data(self, M):
        # smooth data with a gradient bounded away from zero: the central
        # stencil carries essentially all the weight
        m = mm.rectangle_mesh(12, 12)
        w = WenoReconstructor(m, M)
        Q = cell_averages_of_function(
            m, lambda x: np.exp(0.7 * x[:, 0] + 0.4 * x[:, 1])[:, None], degree=8
        )
        w.reconstruct(Q)
        assert w.last_weights[:, 0, :].min() > 0.9


class TestOscillationIndicator:
    def test_constant_zero(self):
        mb = modal_basis(2)
        c = np.zeros(mb.n)
        c[0] = 4.0
        assert c @ mb.oscillation @ c == pytest.approx(0.0, abs=1e-20)

    def test_quadratic_homogeneity(self):
        rng = np.random.default_rng(14)
        mb = modal_basis(3)
        c = rng.standard_normal(mb.n)
        s1 = c @ mb.oscillation @ c
        s2 = (2.5 * c) @ mb.oscillation @ (2.5 * c)
        assert s2 == pytest.approx(2.5**2 * s1, rel=1e-13)

    def test_linear_mode_quadrature_oracle(self):
        # sigma of w = xi equals the quadrature of |grad w|^2 (first and only
        # derivative layer of a linear function)
        mb = modal_basis(1)
        pts, qw = triangle_quadrature(4)
        # coefficients representing w(xi, eta) = xi
        V = mb.eval(pts)
        G = np.einsum("q,ql,qm->lm", qw, V, V)
        b = np.einsum("q,ql,q->l", qw, V, pts[:, 0])
        c = np.linalg.solve(G, b)
        sig = c @ mb.oscillation @ c
        # |grad xi|^2 = 1 integrated over the reference triangle = 1/2
        assert sig == pytest.approx(0.5, rel=1e-12)

    def test_positive_semidefinite(self):
        rng = np.random.default_rng(15)
        for M in (1, 2, 3):
            mb = modal_basis(M)
            for _ in range(50):
                c = rng.standard_normal(mb.n)
                assert c @ mb.oscillation @ c >= -1e-12
