"""One-step direct ALE finite-volume update on moving space-time control
volumes.

Every interior face is integrated once over its lateral space-time
sub-volume with a Rusanov-type flux in the space-time normal direction plus
the path-conservative jump term (straight-line path, 3-point Gauss rule);
the conservative part enters the two adjacent cells antisymmetrically while
the jump term enters both with the same sign.  Interior space-time
quadrature adds the algebraic sources (the predictor's implicitly relaxed
expansion) minus the non-conservative volume term.
"""

from __future__ import annotations

import numpy as np

from . import physics as ph
from .basis import gauss_legendre_01, spacetime_basis, triangle_quadrature
from .boundary import BoundarySpec, ghost_state
from .mesh import MovingMesh, spacetime_face_quadrature, triangle_area
from .physics import MaterialModel, NonPhysicalState

_PATH_S, _PATH_W = gauss_legendre_01(3)


def spacetime_flux(q, nrm, mat: MaterialModel, p=None):
    """F~ . n~ for unit space-time normals (..., 4) with zero z part."""
    F = ph.flux_tensor(q, mat, p=p)
    return (
        F[..., 0] * nrm[..., 0, None]
        + F[..., 1] * nrm[..., 1, None]
        + q * nrm[..., 3, None]
    )


def path_jump(qm, qp, nrm, mat: MaterialModel):
    """(1/2) (int_0^1 B(Psi).n ds) (q+ - q-): nonzero only in the distortion
    rows.  The spatial normal part of the space-time normal is used as-is
    (carrying its |n_s| <= 1 scale)."""
    dA = (qp[..., ph.DIST] - qm[..., ph.DIST]).reshape(qp.shape[:-1] + (3, 3))
    n3 = np.zeros(qp.shape[:-1] + (3,))
    n3[..., :2] = nrm[..., :2]
    acc = np.zeros_like(dA)
    for s, w in zip(_PATH_S, _PATH_W):
        qs = qm + s * (qp - qm)
        v = ph.velocity(qs)
        vn = np.einsum("...i,...i->...", v, n3)
        dAv = np.einsum("...ij,...j->...i", dA, v)
        acc += w * (vn[..., None, None] * dA - np.einsum("...i,...k->...ik", dAv, n3))
    out = np.zeros_like(qp)
    out[..., ph.DIST] = 0.5 * acc.reshape(qp.shape[:-1] + (9,))
    return out


def rusanov_ale_flux(qm, qp, nrm, mat: MaterialModel):
    """Full Rusanov-type ALE flux G~ . n~ seen from the minus side (the cell
    whose outward normal is nrm): conservative part plus jump term."""
    cons, jump, _ = _flux_parts(qm, qp, nrm, mat)
    return cons + jump


def _flux_parts(qm, qp, nrm, mat: MaterialModel):
    """(conservative+dissipative part, path-jump part, lambda_max)."""
    pm = ph.pressure_from_conserved(qm, mat, check=False)
    pp = ph.pressure_from_conserved(qp, mat, check=False)
    Fm = spacetime_flux(qm, nrm, mat, p=pm)
    Fp = spacetime_flux(qp, nrm, mat, p=pp)
    ns_norm = np.sqrt(nrm[..., 0] ** 2 + nrm[..., 1] ** 2)
    lam = np.maximum(
        _signal(qm, nrm, ns_norm, mat, pm), _signal(qp, nrm, ns_norm, mat, pp)
    )
    dq = qp - qm
    cons = 0.5 * (Fm + Fp) - 0.5 * lam[..., None] * dq
    jump = path_jump(qm, qp, nrm, mat)
    return cons, jump, lam


def _signal(q, nrm, ns_norm, mat, p):
    v = ph.velocity(q)
    vn_rel = (
        v[..., 0] * nrm[..., 0] + v[..., 1] * nrm[..., 1] + nrm[..., 3]
    )
    return np.abs(vn_rel) + ns_norm * ph.sound_speed(q, mat, p=p)


class AleFvUpdate:
    """Assembles the per-step update for one mesh/material/boundary setup."""

    def __init__(self, mesh: MovingMesh, M, mat: MaterialModel,
                 boundary_specs=None, source_mode="integrated"):
        self.mesh = mesh
        self.M = M
        self.mat = mat
        self.stb = spacetime_basis(M)
        self.n1d = (2 * M + 1 + 1) // 2 + 1
        self.tri_pts, self.tri_w = triangle_quadrature(2 * M)
        self.specs = boundary_specs or {}
        self.source_mode = source_mode
        # face groups
        self.fi = mesh.faces_int
        self.bnd_groups = {}
        for (c, k) in map(tuple, mesh.faces_bnd):
            tag = mesh.boundary_tag.get((c, k), "transmissive")
            self.bnd_groups.setdefault(tag, []).append((c, k))
        self.bnd_groups = {
            t: np.asarray(v, dtype=np.int64) for t, v in self.bnd_groups.items()
        }
        gl, glw = gauss_legendre_01(self.n1d)
        self.tau_levels = gl
        self.tau_weights = glw
        # time-basis values at the quadrature tau levels
        self.Ltau = self.stb.time.eval(gl)       # (K, nt)

    # -- trace machinery -----------------------------------------------------

    def _level_geometry(self, verts_o, verts_n):
        """Affine inverse maps of every cell at every tau level."""
        K = len(self.tau_levels)
        v0 = np.empty((K, len(verts_o), 2))
        Jinv = np.empty((K, len(verts_o), 2, 2))
        for k, tau in enumerate(self.tau_levels):
            v = (1.0 - tau) * verts_o + tau * verts_n
            J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            Jinv[k, :, 0, 0] = J[:, 1, 1] / det
            Jinv[k, :, 0, 1] = -J[:, 0, 1] / det
            Jinv[k, :, 1, 0] = -J[:, 1, 0] / det
            Jinv[k, :, 1, 1] = J[:, 0, 0] / det
            v0[k] = v[:, 0]
        return v0, Jinv

    def _traces(self, cells, pts_xy, v0, Jinv, qtau):
        """Predictor traces of given cells at face quadrature points.

        ``pts_xy``: (F, nchi, K, 2) physical points grouped by tau level.
        Returns (F, nchi, K, 17)."""
        sb = self.stb.space
        K = len(self.tau_levels)
        out = np.empty(pts_xy.shape[:-1] + (ph.NVAR,))
        for k in range(K):
            d = pts_xy[:, :, k, :] - v0[k][cells][:, None, :]
            ref = np.einsum("fij,fpj->fpi", Jinv[k][cells], d)
            vals = sb.eval(ref)                          # (F, nchi, ns)
            out[:, :, k, :] = np.einsum("fps,fsv->fpv", vals, qtau[cells, k])
        return out

    # -- main ------------------------------------------------------------------

    def update(self, Q, pred, dt, t0=0.0):
        """New cell averages from Eq-form: |T1| Q1 = |T0| Q0 - sum_faces
        int G~.n~ + int (S_h - P_h)."""
        mesh = self.mesh
        mat = self.mat
        verts_o = mesh.vertices(mesh.nodes)
        verts_n = mesh.vertices(mesh.nodes_new)
        a0 = triangle_area(verts_o)
        a1 = triangle_area(verts_n)
        N = mesh.n_cells
        K = len(self.tau_levels)
        nchi = self.n1d

        v0, Jinv = self._level_geometry(verts_o, verts_n)
        # collapse the predictor expansions onto the tau levels
        qtau = np.einsum("km,cmsv->cksv", self.Ltau, pred.qhat)
        acc = a0[:, None] * Q
        if dt == 0.0:
            return Q.copy(), {"max_signal": 0.0}

        # ---- interior faces
        ci, ki, cj, kj = (self.fi[:, m] for m in range(4))
        xa0 = verts_o[ci, ki]
        xb0 = verts_o[ci, (ki + 1) % 3]
        xa1 = verts_n[ci, ki]
        xb1 = verts_n[ci, (ki + 1) % 3]
        pts, w, nrm, _tau = spacetime_face_quadrature(xa0, xb0, xa1, xb1, dt, self.n1d)
        F = len(ci)
        pts = pts.reshape(F, nchi, K, 3)
        w = w.reshape(F, nchi, K)
        nrm = nrm.reshape(F, nchi, K, 4)
        qm = self._traces(ci, pts[..., :2], v0, Jinv, qtau)
        delta = mesh.face_delta
        pts_j = pts[..., :2] - delta[:, None, None, :]
        qp = self._traces(cj, pts_j, v0, Jinv, qtau)
        if not (np.isfinite(qm).all() and np.isfinite(qp).all()):
            bad = np.where(~np.isfinite(qm).reshape(F, -1).all(axis=1)
                           | ~np.isfinite(qp).reshape(F, -1).all(axis=1))[0]
            raise NonPhysicalState(
                f"non-finite predictor trace at faces {bad[:10]} "
                f"(cells {ci[bad[:10]]}/{cj[bad[:10]]})"
            )
        cons, jump, lam = _flux_parts(qm, qp, nrm, mat)
        wi = w[..., None]
        gi = (wi * (cons + jump)).sum(axis=(1, 2))
        gj = (wi * (-cons + jump)).sum(axis=(1, 2))
        np.subtract.at(acc, ci, gi)
        np.subtract.at(acc, cj, gj)
        max_sig = float(lam.max()) if F else 0.0

        # ---- boundary faces
        for tag, fk in self.bnd_groups.items():
            cb, kb = fk[:, 0], fk[:, 1]
            xa0 = verts_o[cb, kb]
            xb0 = verts_o[cb, (kb + 1) % 3]
            xa1 = verts_n[cb, kb]
            xb1 = verts_n[cb, (kb + 1) % 3]
            pts, w, nrm, _tau = spacetime_face_quadrature(
                xa0, xb0, xa1, xb1, dt, self.n1d
            )
            Fb = len(cb)
            pts = pts.reshape(Fb, nchi, K, 3)
            w = w.reshape(Fb, nchi, K)
            nrm = nrm.reshape(Fb, nchi, K, 4)
            qm = self._traces(cb, pts[..., :2], v0, Jinv, qtau)
            ns_norm = np.sqrt(nrm[..., 0] ** 2 + nrm[..., 1] ** 2)
            n_unit = nrm[..., :2] / ns_norm[..., None]
            t_pts = t0 + pts[..., 2]
            spec = self.specs.get(tag, BoundarySpec())
            qg = ghost_state(tag, qm, n_unit, t_pts, dt, mat, spec)
            cons, jump, lam = _flux_parts(qm, qg, nrm, mat)
            gb = (w[..., None] * (cons + jump)).sum(axis=(1, 2))
            np.subtract.at(acc, cb, gb)
            if Fb:
                max_sig = max(max_sig, float(lam.max()))

        # ---- interior space-time integral of S_h - P_h
        if self.source_mode == "integrated":
            SmP = self._interior_term(pred, dt)
        else:
            SmP = self._interior_term(pred, dt, sources=False)
        # quadrature over the moving cell at each tau level
        sb_vals = self.stb.space.eval(self.tri_pts)       # (P, ns)
        for k, (tau, wt) in enumerate(zip(self.tau_levels, self.tau_weights)):
            v = (1.0 - tau) * verts_o + tau * verts_n
            ar = triangle_area(v)
            vals = np.einsum("ps,csv->cpv", sb_vals, SmP[:, k])
            acc += (2.0 * dt * wt) * ar[:, None] * np.einsum(
                "p,cpv->cv", self.tri_w, vals
            )

        Qnew = acc / a1[:, None]
        self._validate(Qnew)
        return Qnew, {"max_signal": max_sig}

    def _interior_term(self, pred, dt, sources=True):
        """(S_h - P_h) collapsed onto the tau levels, shape (N, K, ns, 17)."""
        P = ph.nonconservative_product(
            pred.qhat,
            _predictor_gradient(self.stb, pred.qhat, pred.xhat),
        )
        term = -P
        if sources:
            term = term + pred.shat
        return np.einsum("km,cmsv->cksv", self.Ltau, term)

    def _validate(self, Qnew):
        fin = np.isfinite(Qnew).all(axis=-1)
        if not np.all(fin):
            idx = np.where(~fin)[0]
            raise NonPhysicalState(
                f"non-finite state in cells {idx[:10]} after update",
                data=Qnew[idx[:10]],
            )
        rho = Qnew[..., ph.RHO]
        bad = ~(rho > 0.0)
        if np.any(bad):
            idx = np.where(bad)[0]
            raise NonPhysicalState(
                f"negative density in cells {idx[:10]} after update",
                data=Qnew[idx[:10]],
            )
        # full internal-energy check (raises with cell data)
        ph.pressure_from_conserved(Qnew, self.mat, check=True)


def _predictor_gradient(stb, qhat, xhat):
    x_xi = np.einsum("is,cmsd->cmid", stb.Dxi, xhat)
    x_eta = np.einsum("is,cmsd->cmid", stb.Deta, xhat)
    det = x_xi[..., 0] * x_eta[..., 1] - x_xi[..., 1] * x_eta[..., 0]
    inv = 1.0 / det
    xi_x = x_eta[..., 1] * inv
    xi_y = -x_eta[..., 0] * inv
    eta_x = -x_xi[..., 1] * inv
    eta_y = x_xi[..., 0] * inv
    q_xi = np.einsum("is,cmsv->cmiv", stb.Dxi, qhat)
    q_eta = np.einsum("is,cmsv->cmiv", stb.Deta, qhat)
    grad = np.zeros(qhat.shape + (3,))
    grad[..., 0] = q_xi * xi_x[..., None] + q_eta * eta_x[..., None]
    grad[..., 1] = q_xi * xi_y[..., None] + q_eta * eta_y[..., None]
    return grad
