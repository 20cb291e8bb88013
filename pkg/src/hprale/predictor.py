"""Element-local space-time predictor.

Each cell's reconstruction polynomial is evolved through one time step by a
nodal space-time Galerkin method: Lagrange basis over the P_M triangle nodes
tensored with Gauss-Legendre time nodes.  The update operator K1^{-1} M of
the weak form factorizes exactly into (identity over spatial nodes) x (an
(M+1)x(M+1) time matrix), so the transport term is iterated explicitly while
the stiff algebraic sources are solved implicitly per spatial node over the
coupled time nodes: damped Newton for the distortion block with its analytic
Jacobian, a linear solve for the thermal-impulse block with the temperature
frozen within the sweep.  The cell geometry moves along with the iteration
through the mesh-velocity ODE discretized with the same basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import physics as ph
from .basis import spacetime_basis
from .physics import MaterialModel

STIFF_RATIO = 20.0   # tau < STIFF_RATIO*dt selects the implicit source path


@dataclass
class PredictorData:
    """Space-time expansions produced by the predictor, laid out
    (cells, time nodes, spatial nodes, ...)."""

    M: int
    dt: float
    qhat: np.ndarray      # (N, nt, ns, 17)
    shat: np.ndarray      # (N, nt, ns, 17) algebraic source expansion
    xhat: np.ndarray      # (N, nt, ns, 2) internal geometry
    vhat: np.ndarray      # (N, nt, ns, 2) mesh velocity expansion
    fallback: np.ndarray  # bool (N,) cells that fell back to constant-in-time


# ---------------------------------------------------------------------------
# batched stiff algebra


def det3(A):
    return (
        A[..., 0, 0] * (A[..., 1, 1] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 1])
        - A[..., 0, 1] * (A[..., 1, 0] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 0])
        + A[..., 0, 2] * (A[..., 1, 0] * A[..., 2, 1] - A[..., 1, 1] * A[..., 2, 0])
    )


def cofactor3(A):
    C = np.empty_like(A)
    for i in range(3):
        for j in range(3):
            r = [k for k in range(3) if k != i]
            c = [k for k in range(3) if k != j]
            C[..., i, j] = (-1.0) ** (i + j) * (
                A[..., r[0], c[0]] * A[..., r[1], c[1]]
                - A[..., r[0], c[1]] * A[..., r[1], c[0]]
            )
    return C


def _spow(x, p):
    return np.sign(x) * np.abs(x) ** p


def strain_source_and_jacobian(A, tau1):
    """S(A) = -3/tau1 |A|^(5/3) A dev(A^T A) and dS/dA as a (..., 9, 9)
    matrix with row (i,k), column (m,n)."""
    G = np.matmul(np.swapaxes(A, -1, -2), A)
    trG = np.einsum("...ii->...", G)
    devG = G - (trG / 3.0)[..., None, None] * np.eye(3)
    T = np.matmul(A, devG)
    d = det3(A)
    C = cofactor3(A)
    d23 = _spow(d, 2.0 / 3.0)
    d53 = _spow(d, 5.0 / 3.0)
    pref = -3.0 / tau1
    S = pref[..., None, None] * d53[..., None, None] * T
    AAt = np.matmul(A, np.swapaxes(A, -1, -2))
    eye = np.eye(3)
    dT = (
        np.einsum("im,...nk->...ikmn", eye, G)
        + np.einsum("...in,...mk->...ikmn", A, A)
        + np.einsum("kn,...im->...ikmn", eye, AAt)
        - (2.0 / 3.0) * np.einsum("...mn,...ik->...ikmn", A, A)
        - (1.0 / 3.0) * np.einsum("...,im,kn->...ikmn", trG, eye, eye)
    )
    dS = pref[..., None, None, None, None] * (
        (5.0 / 3.0) * d23[..., None, None, None, None]
        * np.einsum("...mn,...ik->...ikmn", C, T)
        + d53[..., None, None, None, None] * dT
    )
    sh = A.shape[:-2]
    return S, dS.reshape(sh + (9, 9))


def solve_strain_relaxation(B, kappa, tau1, guess, tol=1e-12, max_iter=50):
    """Solve  A - kappa (.) S_strain(A) = B  for batches of 3x3 blocks.

    ``kappa`` couples a trailing block axis: if B has shape (nb, nt, 3, 3)
    then kappa is (nt, nt) and the equation couples the nt sub-blocks; pass
    kappa of shape () for a pointwise solve.  Returns (A, converged).

    Damped Newton with the analytic source Jacobian; elements that fail the
    direct solve (guesses far off the relaxed manifold while tau1 is many
    orders below the step) are retried with a geometric continuation ramp in
    the relaxation time, each stage warm-starting the next.
    """
    B = np.asarray(B, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    if kappa.ndim == 0:
        B = B[..., None, :, :]
        kappa = kappa.reshape(1, 1)
        tau1 = np.asarray(tau1, dtype=float)[..., None]
        squeeze = True
    else:
        squeeze = False
    tau1 = np.broadcast_to(np.asarray(tau1, dtype=float), B.shape[:2])
    guess = np.asarray(guess, dtype=float).reshape(B.shape)
    finite = np.isfinite(B).reshape(B.shape[0], -1).all(axis=1)
    finite &= np.isfinite(guess).reshape(B.shape[0], -1).all(axis=1)
    if not np.all(finite):
        A = guess.copy()
        conv = np.zeros(B.shape[0], dtype=bool)
        idx = np.where(finite)[0]
        if len(idx):
            A[idx], conv[idx] = solve_strain_relaxation(
                B[idx], kappa if kappa.ndim else float(kappa),
                tau1[idx], guess[idx], tol, max_iter,
            )
        out = A[..., 0, :, :] if squeeze else A
        return out, conv
    kmax = np.abs(kappa).max()
    tmin = tau1.min(axis=1)
    # effectively source-free blocks: the solution is B itself
    elastic = 3.0 * kmax / tmin < 1e-12
    # in the deeply stiff regime the solution sits on the relaxed manifold
    # dev(A^T A) = 0 to within tau1; iterate there (projected Newton), which
    # sidesteps the curvature-amplified residual of off-manifold trials
    ultra = ~elastic & (tmin * 1e5 < 3.0 * kmax)
    A = np.empty_like(B)
    conv = np.zeros(B.shape[0], dtype=bool)
    if np.any(elastic):
        A[elastic] = B[elastic]
        conv[elastic] = True
    for mask, proj in ((~ultra & ~elastic, False), (ultra, True)):
        if not np.any(mask):
            continue
        idx = np.where(mask)[0]
        Ai, ok = _newton_strain(
            B[idx], kappa, tau1[idx], guess[idx], tol, max_iter, project=proj
        )
        if not np.all(ok) and not proj:
            # continuation ramp in the relaxation time as a backstop
            sub = np.where(~ok)[0]
            tau_eff = np.maximum(
                np.full_like(tau1[idx][sub], max(3.0 * kmax, 1e-30)),
                tau1[idx][sub],
            )
            Ac = guess[idx][sub]
            for _ in range(32):
                Ac, okc = _newton_strain(B[idx][sub], kappa, tau_eff, Ac, tol, 20)
                if np.all(tau_eff <= tau1[idx][sub]) or not np.any(okc):
                    break
                tau_eff = np.maximum(0.01 * tau_eff, tau1[idx][sub])
            Ai[sub], ok[sub] = Ac, okc
        A[idx], conv[idx] = Ai, ok
    out = A[..., 0, :, :] if squeeze else A
    return out, conv


def manifold_project(A):
    """Det-preserving projection onto the stress-free manifold: the polar
    rotation of A scaled to keep det(A)."""
    U, _, Vt = np.linalg.svd(A)
    R = U @ Vt
    d = det3(A)
    c = _spow(d * det3(R), 1.0 / 3.0)
    return c[..., None, None] * R


def _newton_strain(B, kappa, tau1, guess, tol, max_iter, project=False):
    nb = B.shape[0]
    nt = B.shape[1]
    tau1 = np.asarray(tau1, dtype=float)
    krow = np.abs(kappa).sum(axis=1).max()
    A = guess.copy()
    if project:
        # SVD-project only blocks measurably off the manifold; warm starts
        # land here already relaxed
        G = np.einsum("...ji,...jk->...ik", A, A)
        dev = G - (np.einsum("...ii->...", G) / 3.0)[..., None, None] * np.eye(3)
        devn = np.abs(dev).reshape(nb, -1).max(axis=1)
        far = devn * (3.0 * krow / tau1.min(axis=1)) > 0.1
        if np.any(far):
            A[far] = manifold_project(A[far])
    scale = 1.0 + np.abs(B).reshape(nb, -1).max(axis=1)
    eps = np.finfo(float).eps

    def residual(Aw, tw, jac=True):
        if jac:
            S, dS = strain_source_and_jacobian(Aw, tw)
        else:
            S, dS = ph.strain_source(Aw, tw), None
        R = Aw - np.einsum("mn,bnik->bmik", kappa, S) - Bw
        if project:
            # the limiting solution carries a finite source along the normal
            # space {A W : W traceless symmetric}; only the tangential
            # residual can and must vanish
            d = det3(Aw)
            Ainv = cofactor3(Aw).swapaxes(-1, -2) / d[..., None, None]
            W = np.einsum("...ij,...jk->...ik", Ainv, R)
            W = 0.5 * (W + np.swapaxes(W, -1, -2))
            W = W - (np.einsum("...ii->...", W) / 3.0)[..., None, None] * np.eye(3)
            R = R - np.einsum("...ij,...jk->...ik", Aw, W)
        return R, dS

    def res_floor(Aw, tw):
        # rounding floor of the residual evaluation: the stiff term carries
        # the eps-level noise of dev(A^T A) amplified by 3 kappa/tau1
        # |A|^(5/3); it leaks into every component, tangential included
        an = np.abs(Aw).reshape(Aw.shape[0], -1).max(axis=1)
        d53 = np.abs(det3(Aw)).max(axis=1) ** (5.0 / 3.0)
        return 8.0 * eps * krow * (3.0 / tw.min(axis=1)) * d53 * an**3

    conv = np.zeros(nb, dtype=bool)
    work = np.arange(nb)
    for _ in range(max_iter):
        Bw = B[work]
        Aw = A[work]
        tw = tau1[work]
        R, _ = residual(Aw, tw, jac=False)
        rn = np.abs(R).reshape(len(work), -1).max(axis=1)
        tol_w = np.maximum(tol * scale[work], res_floor(Aw, tw))
        done = rn <= tol_w
        if np.all(done):
            conv[work] = True
            work = work[:0]
            break
        keep = ~done
        conv[work[done]] = True
        work = work[keep]
        Aw, Bw, tw = Aw[keep], Bw[keep], tw[keep]
        R, rn, tol_w = R[keep], rn[keep], tol_w[keep]
        nw = len(work)
        # Jacobian (only for the surviving blocks)
        _, dS = strain_source_and_jacobian(Aw, tw)
        J = np.zeros((nw, nt * 9, nt * 9))
        idx = np.arange(nt * 9)
        J[:, idx, idx] = 1.0
        for m in range(nt):
            for n in range(nt):
                if kappa[m, n] != 0.0:
                    J[:, 9 * m : 9 * m + 9, 9 * n : 9 * n + 9] -= kappa[m, n] * dS[:, n]
        try:
            step = np.linalg.solve(J, R.reshape(nw, -1, 1))[..., 0].reshape(R.shape)
        except np.linalg.LinAlgError:
            break
        stepn = np.abs(step).reshape(nw, -1).max(axis=1)
        # backtracking on the residual norm
        lam = np.ones(nw)
        best = Aw.copy()
        improved = np.zeros(nw, dtype=bool)
        for _ in range(12):
            trial = Aw - lam[:, None, None, None] * step
            if project:
                trial = manifold_project(trial)
            Rt, _ = residual(trial, tw, jac=False)
            rt = np.abs(Rt).reshape(nw, -1).max(axis=1)
            good = (rt < rn * (1.0 - 1e-4) + tol_w) & ~improved
            best[good] = trial[good]
            improved |= good
            if np.all(improved):
                break
            lam = np.where(improved, lam, 0.5 * lam)
        A[work] = np.where(improved[:, None, None, None], best, Aw)
        # a vanishing Newton step means the iterate is converged even when
        # the residual sits above tol (stiff evaluation floor)
        step_tol = np.maximum(tol * scale[work], res_floor(Aw, tw))
        settled = stepn <= step_tol
        stalled = ~improved & (stepn <= np.maximum(1e-7 * scale[work], step_tol))
        accept = settled | stalled
        conv[work[accept]] = True
        cont = improved & ~accept
        work = work[cont]
        if len(work) == 0:
            break
    return A, conv


# ---------------------------------------------------------------------------
# the predictor


class SpaceTimePredictor:
    """Evolves reconstructions locally through [t^n, t^{n+1}].

    ``motion`` is one of ``"eulerian"``, ``"lagrangian"``, ``"prescribed"``;
    for prescribed motion pass ``velocity_field(x, t) -> (..., 2)``.
    """

    def __init__(self, M, mat: MaterialModel, motion="lagrangian",
                 velocity_field=None, tol=1e-10, max_sweeps=None):
        self.M = M
        self.mat = mat
        self.motion = motion
        self.velocity_field = velocity_field
        self.tol = tol
        self.max_sweeps = max_sweeps or 2 * (M + 1)
        self.stb = spacetime_basis(M)

    # -- helpers ------------------------------------------------------------

    def _mesh_velocity(self, q, x, t):
        if self.motion == "eulerian":
            return np.zeros(q.shape[:-1] + (2,))
        if self.motion == "lagrangian":
            return q[..., 1:3] / q[..., :1]
        if self.motion == "prescribed":
            return self.velocity_field(x, t)
        raise ValueError(f"unknown motion mode {self.motion!r}")

    def _transport(self, qhat, xhat, vhat, dt):
        """The unified convective/flux/non-conservative term at every
        space-time node, assembled with the isoparametric inverse Jacobian."""
        stb = self.stb
        mat = self.mat
        # geometry derivatives
        x_xi = np.einsum("is,cmsd->cmid", stb.Dxi, xhat)
        x_eta = np.einsum("is,cmsd->cmid", stb.Deta, xhat)
        x_tau = np.einsum("mn,cnsd->cmsd", stb.Dt, xhat)
        det = x_xi[..., 0] * x_eta[..., 1] - x_xi[..., 1] * x_eta[..., 0]
        inv = 1.0 / det
        xi_x = x_eta[..., 1] * inv
        xi_y = -x_eta[..., 0] * inv
        eta_x = -x_xi[..., 1] * inv
        eta_y = x_xi[..., 0] * inv
        # xi_t = -(K^-1 x_tau)/dt
        xi_t = -(xi_x * x_tau[..., 0] + xi_y * x_tau[..., 1]) / dt
        eta_t = -(eta_x * x_tau[..., 0] + eta_y * x_tau[..., 1]) / dt
        q_xi = np.einsum("is,cmsv->cmiv", stb.Dxi, qhat)
        q_eta = np.einsum("is,cmsv->cmiv", stb.Deta, qhat)
        p = ph.pressure_from_conserved(qhat, mat, check=False)
        F = ph.flux_tensor(qhat, mat, p=p)
        f_xi = np.einsum("is,cmsv->cmiv", stb.Dxi, F[..., 0])
        f_eta = np.einsum("is,cmsv->cmiv", stb.Deta, F[..., 0])
        g_xi = np.einsum("is,cmsv->cmiv", stb.Dxi, F[..., 1])
        g_eta = np.einsum("is,cmsv->cmiv", stb.Deta, F[..., 1])
        H = (
            q_xi * xi_t[..., None]
            + q_eta * eta_t[..., None]
            + xi_x[..., None] * f_xi
            + eta_x[..., None] * f_eta
            + xi_y[..., None] * g_xi
            + eta_y[..., None] * g_eta
        )
        grad = np.zeros(qhat.shape + (3,))
        grad[..., 0] = q_xi * xi_x[..., None] + q_eta * eta_x[..., None]
        grad[..., 1] = q_xi * xi_y[..., None] + q_eta * eta_y[..., None]
        H += ph.nonconservative_product(qhat, grad)
        return H

    def physical_gradient(self, qhat, xhat, dt):
        """Spatial gradient (..., 17, 3) of q_h at the space-time nodes."""
        stb = self.stb
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

    # -- main entry ----------------------------------------------------------

    def predict(self, verts, w_nodal, dt, t0=0.0):
        """Run the predictor for a batch of cells.

        ``verts``: (N, 3, 2) cell vertices at t^n;
        ``w_nodal``: (N, ns, 17) reconstruction values at the spatial nodes.
        """
        stb = self.stb
        mat = self.mat
        N = len(verts)
        nt, ns = stb.n_time, stb.n_space
        nodes = stb.space.nodes
        x0 = (
            verts[:, None, 0, :]
            + nodes[None, :, 0, None] * (verts[:, 1, :] - verts[:, 0, :])[:, None, :]
            + nodes[None, :, 1, None] * (verts[:, 2, :] - verts[:, 0, :])[:, None, :]
        )                                                     # (N, ns, 2)
        qhat = np.repeat(w_nodal[:, None, :, :], nt, axis=1)  # (N, nt, ns, 17)
        xhat = np.repeat(x0[:, None, :, :], nt, axis=1)
        t_nodes = np.broadcast_to(
            t0 + stb.time.tau[None, :, None] * dt, (N, nt, ns)
        )
        vhat = self._mesh_velocity(qhat, xhat, t_nodes)
        shat = np.zeros_like(qhat)

        # stiffness triage
        tau2 = mat.tau2_resolved
        heat = mat.heat_conduction_active
        Wt = stb.Wt

        prim0 = ph.cons_to_prim(w_nodal, mat, check=False)
        tau1_0 = ph.relaxation_time(prim0, mat)               # (N, ns)
        has_strain = mat.c_s > 0.0 and mat.tau1_mode != "infinite"
        # power-law loading can turn stiff mid-sweep (plastic onset), so it
        # always takes the implicit path
        stiff_strain = has_strain and (
            mat.tau1_mode == "power_law"
            or bool(np.any(tau1_0 < STIFF_RATIO * dt))
        )

        failed = np.zeros(N, dtype=bool)
        bfull = np.repeat(w_nodal[:, None], nt, axis=1)
        w0 = bfull.copy()
        active = np.arange(N)
        dq_last = np.zeros(N)
        self._sweep_loop(
            active, qhat, xhat, vhat, shat, bfull, w0, x0, t_nodes, dt,
            dq_last, failed, has_strain, stiff_strain, heat, tau2,
        )
        # reaching the sweep cap is normal (each sweep gains one order in dt);
        # fall back only on actual breakdown: divergence or non-finite values
        qn_all = np.abs(qhat).reshape(N, -1).max(axis=1)
        bad = ~np.isfinite(qhat).reshape(N, -1).all(axis=1)
        bad |= dq_last > 0.1 * (qn_all + 1e-300)
        failed |= bad

        # source expansion: recover the implicitly relaxed values (bounded in
        # the stiff limit), explicit evaluation otherwise
        if has_strain or heat:
            shat_full = np.einsum("mn,cnsv->cmsv", stb.Wt_inv, (qhat - bfull) / dt)
            if has_strain:
                shat[..., ph.DIST] = shat_full[..., ph.DIST]
            if heat:
                shat[..., ph.RJ] = shat_full[..., ph.RJ]

        if np.any(failed):
            idx = np.where(failed)[0]
            qhat[idx] = np.repeat(w_nodal[idx, None], nt, axis=1)
            shat[idx] = 0.0
            vhat[idx] = self._mesh_velocity(qhat[idx],
                                            np.repeat(x0[idx, None], nt, axis=1),
                                            t_nodes[idx])
            xhat[idx] = np.repeat(x0[idx, None], nt, axis=1) + dt * np.einsum(
                "mn,cnsd->cmsd", Wt, vhat[idx]
            )
        return PredictorData(
            M=self.M, dt=dt, qhat=qhat, shat=shat, xhat=xhat, vhat=vhat,
            fallback=failed,
        )

    def _sweep_loop(self, active, qhat, xhat, vhat, shat, bfull, w0, x0,
                    t_nodes, dt, dq_last, failed, has_strain, stiff_strain,
                    heat, tau2):
        """Picard sweeps over the active cells, updating all state arrays in
        place.  Transient iterates may overflow before the per-cell fallback
        catches them, hence the errstate guard; final states are validated
        by the corrector."""
        stb = self.stb
        mat = self.mat
        nt, ns = stb.n_time, stb.n_space
        Wt = stb.Wt
        err_guard = np.errstate(over="ignore", invalid="ignore", divide="ignore")
        err_guard.__enter__()
        for sweep in range(self.max_sweeps):
            a = active
            qa = qhat[a]
            va = self._mesh_velocity(qa, xhat[a], t_nodes[a])
            xa = x0[a, None] + dt * np.einsum("mn,cnsd->cmsd", Wt, va)
            vhat[a], xhat[a] = va, xa
            H = self._transport(qa, xa, va, dt)
            b = w0[a] - dt * np.einsum("mn,cnsv->cmsv", Wt, H)
            bfull[a] = b
            qnew = b.copy()
            prim = ph.cons_to_prim(qa, mat, check=False)
            if has_strain:
                tau1_n = ph.relaxation_time(prim, mat)        # (na, nt, ns)
            if has_strain and not stiff_strain:
                SA = ph.strain_source(
                    ph.distortion(qa), tau1_n
                ).reshape(qa.shape[:-1] + (9,))
                qnew[..., ph.DIST] += dt * np.einsum("mn,cnsv->cmsv", Wt, SA)
            elif stiff_strain:
                # coupled implicit solve per spatial node over the time block
                na = len(a)
                Bblk = (
                    qnew[..., ph.DIST]
                    .reshape(na, nt, ns, 3, 3)
                    .transpose(0, 2, 1, 3, 4)
                    .reshape(na * ns, nt, 3, 3)
                )
                guess = (
                    qa[..., ph.DIST]
                    .reshape(na, nt, ns, 3, 3)
                    .transpose(0, 2, 1, 3, 4)
                    .reshape(na * ns, nt, 3, 3)
                )
                t1 = tau1_n.transpose(0, 2, 1).reshape(na * ns, nt)
                Ablk, ok = solve_strain_relaxation(Bblk, dt * Wt, t1, guess)
                okc = ok.reshape(na, ns).all(axis=1)
                failed[a[~okc]] = True
                qnew[..., ph.DIST] = (
                    Ablk.reshape(na, ns, nt, 9).transpose(0, 2, 1, 3)
                )
            if heat:
                na = len(a)
                T = ph.temperature(prim[..., ph.RHO], prim[..., ph.EN], mat)
                cfac = (T / mat.T0) * (mat.rho0 / qa[..., ph.RHO]) / tau2
                cblk = cfac.transpose(0, 2, 1).reshape(na * ns, nt)
                Msys = np.eye(nt)[None] + dt * Wt[None] * cblk[:, None, :]
                rhs = qnew[..., ph.RJ].transpose(0, 2, 1, 3).reshape(na * ns, nt, 3)
                rj = np.linalg.solve(Msys, rhs)
                qnew[..., ph.RJ] = rj.reshape(na, ns, nt, 3).transpose(0, 2, 1, 3)
            dq = np.abs(qnew - qa).reshape(len(a), -1).max(axis=1)
            qn = np.abs(qnew).reshape(len(a), -1).max(axis=1)
            dq_last[a] = dq
            qhat[a] = qnew
            active = a[~(dq <= self.tol * (qn + 1e-300))]
            if len(active) == 0:
                break
        err_guard.__exit__(None, None, None)
