"""Nonlinear WENO reconstruction of modal polynomials from cell averages.

Seven stencils per cell (one central, three forward sectors, three reverse
sectors) each yield a candidate polynomial by constrained least squares:
conservation on the cell itself is enforced exactly through the modal basis
(whose higher modes have zero mean), the remaining stencil members form the
overdetermined rows.  Candidates are blended with nonlinear weights built
from a quadratic oscillation form of the modal coefficients.
"""

from __future__ import annotations

import numpy as np

from .basis import modal_basis, triangle_quadrature
from .mesh import MovingMesh

_CHUNK = 1024


class WenoReconstructor:
    """Per-mesh reconstruction operator of polynomial degree M.

    Geometry-dependent least-squares factors are rebuilt whenever the mesh
    reports a new geometry epoch; rank-deficient stencils fall back to SVD
    least squares and, failing that, to the cell average (recorded in
    ``fallback_cells``).
    """

    def __init__(self, mesh: MovingMesh, M, lambda_central=1e5, lambda_side=1.0,
                 eps=1e-14, power=8):
        self.mesh = mesh
        self.M = M
        self.stencils = mesh.build_stencils(M)
        self.basis = modal_basis(M)
        self.n_modes = self.basis.n
        self.lam = np.array([lambda_central] + [lambda_side] * 6)
        self.eps = eps
        self.power = power
        self._qpts, self._qw = triangle_quadrature(M)
        self._epoch = None
        self.fallback_cells = np.zeros(0, dtype=np.int64)

    # -- geometry-dependent systems -----------------------------------------

    def _member_means(self, lo, hi):
        """Mean of each basis function over each stencil member, expressed in
        the central cell's reference frame, for cells lo:hi."""
        mesh = self.mesh
        st = self.stencils
        verts = mesh.vertices()
        v0, _, Jinv = mesh.jacobians()
        mem = st.cells[lo:hi]                                  # (n, 7, ne)
        mv = verts[mem] + st.shifts[lo:hi][..., None, :]       # (n, 7, ne, 3, 2)
        qp = self._qpts
        phys = (
            mv[..., 0, None, :]
            + qp[:, 0, None] * (mv[..., 1, None, :] - mv[..., 0, None, :])
            + qp[:, 1, None] * (mv[..., 2, None, :] - mv[..., 0, None, :])
        )                                                      # (n, 7, ne, nq, 2)
        loc = np.einsum(
            "nij,nsmqj->nsmqi", Jinv[lo:hi], phys - v0[lo:hi, None, None, None, :]
        )
        vals = self.basis.eval(loc)                            # (n, 7, ne, nq, nl)
        return 2.0 * np.einsum("q,nsmql->nsml", self._qw, vals)

    def rebuild(self):
        """Recompute and factorize all stencil systems for the current node
        coordinates."""
        N = self.mesh.n_cells
        ne, nl = self.stencils.n_e, self.n_modes
        A = np.empty((N, 7, ne - 1, nl - 1))
        for lo in range(0, N, _CHUNK):
            hi = min(lo + _CHUNK, N)
            means = self._member_means(lo, hi)
            A[lo:hi] = means[:, :, 1:, 1:]
        A = A.reshape(N * 7, ne - 1, nl - 1)
        Qf, Rf = np.linalg.qr(A)
        diag = np.abs(np.diagonal(Rf, axis1=-2, axis2=-1))
        bad = (diag.min(axis=-1) < 1e-10 * np.maximum(diag.max(axis=-1), 1e-300))
        self._solve_ok = ~bad
        # pseudo-inverse P with x = P @ rhs for the good stencils; identity
        # handling (coefficients zero -> cell average) for irreparable ones
        P = np.zeros((N * 7, nl - 1, ne - 1))
        ok = np.where(self._solve_ok)[0]
        P[ok] = np.linalg.solve(Rf[ok], np.swapaxes(Qf[ok], -1, -2))
        fb = []
        for idx in np.where(bad)[0]:
            Pi, *_ = np.linalg.lstsq(A[idx], np.eye(ne - 1), rcond=1e-10)
            if np.all(np.isfinite(Pi)):
                P[idx] = Pi
                self._solve_ok[idx] = True
            else:
                fb.append(idx // 7)
        self.fallback_cells = np.unique(np.asarray(fb, dtype=np.int64))
        self._P = P.reshape(N, 7, nl - 1, ne - 1)
        self._epoch = self.mesh._geometry_epoch

    # -- reconstruction -------------------------------------------------------

    def reconstruct(self, Q):
        """Blend the seven candidate polynomials; returns modal coefficients
        of shape (N, n_modes, nvar)."""
        if self._epoch != self.mesh._geometry_epoch:
            self.rebuild()
        Q = np.asarray(Q, dtype=float)
        nvar = Q.shape[-1]
        st = self.stencils
        rhs = Q[st.cells[:, :, 1:]] - Q[:, None, None, :]      # (N, 7, ne-1, nvar)
        coef = np.einsum("nslm,nsmv->nslv", self._P, rhs)      # (N, 7, nl-1, nvar)
        sig = np.einsum("nslv,lm,nsmv->nsv", coef,
                        self.basis.oscillation[1:, 1:], coef)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            om = self.lam[None, :, None] / (sig + self.eps) ** self.power
            total = om.sum(axis=1)
            om = np.where(np.isfinite(om), om, 0.0)
            total = om.sum(axis=1)
            central_only = total <= 0.0
            om = om / np.where(total > 0.0, total, 1.0)[:, None, :]
        om[:, 0, :][central_only] = 1.0
        out = np.zeros((len(Q), self.n_modes, nvar))
        out[:, 0, :] = Q
        out[:, 1:, :] = np.einsum("nsv,nslv->nlv", om, coef)
        if len(self.fallback_cells):
            out[self.fallback_cells, 1:, :] = 0.0
        self.last_weights = om
        return out

    def evaluate(self, coeffs, cell_ids, ref_pts):
        """Point values of per-cell polynomials at reference coordinates."""
        vals = self.basis.eval(ref_pts)                        # (..., nl)
        return np.einsum("...l,...lv->...v", vals, coeffs[cell_ids])

    def evaluate_at_physical(self, coeffs, cell_ids, x, nodes=None):
        ref = self.mesh.to_reference(cell_ids, x, nodes)
        return self.evaluate(coeffs, cell_ids, ref)


def cell_averages_of_function(mesh: MovingMesh, func, degree=6):
    """Quadrature cell averages of a pointwise field x -> (nvar,)."""
    pts, w = triangle_quadrature(degree)
    verts = mesh.vertices()
    phys = (
        verts[:, None, 0, :]
        + pts[None, :, 0, None] * (verts[:, None, 1, :] - verts[:, None, 0, :])
        + pts[None, :, 1, None] * (verts[:, None, 2, :] - verts[:, None, 0, :])
    )
    vals = func(phys.reshape(-1, 2)).reshape(phys.shape[0], phys.shape[1], -1)
    return 2.0 * np.einsum("q,nqv->nv", w, vals)
