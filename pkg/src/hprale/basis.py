"""Polynomial bases and quadrature on the reference triangle and in time.

The spatial modal basis is the orthogonal Dubiner construction via Jacobi
polynomials on collapsed coordinates; the space-time predictor uses a nodal
Lagrange basis on the tensor product of the P_M triangle nodes with
Gauss-Legendre points in time.  All bases are additionally held as monomial
coefficient tables (degrees here never exceed 4), which gives exact
derivatives and cheap vectorized evaluation everywhere including the
triangle vertices, where the collapsed coordinates degenerate.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import eval_jacobi, roots_jacobi, roots_legendre


def gauss_legendre_01(n):
    """Gauss-Legendre points/weights on [0, 1]."""
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_quadrature(degree):
    """Quadrature on the unit triangle {xi, eta >= 0, xi+eta <= 1}, exact for
    polynomials of total degree <= ``degree``.  Collapsed tensor product of
    Gauss-Legendre with Gauss-Jacobi(1,0); weights sum to 1/2."""
    n = max(1, (degree + 2) // 2)
    xa, wa = roots_legendre(n)
    xb, wb = roots_jacobi(n, 1.0, 0.0)
    a, b = np.meshgrid(xa, xb, indexing="ij")
    wq = np.outer(wa, wb)
    xi = 0.25 * (1.0 + a) * (1.0 - b)
    eta = 0.5 * (1.0 + b)
    # d(xi,eta) = (1-b)/8 da db ; the Jacobi weight already carries (1-b)
    w = wq / 8.0
    return np.column_stack([xi.ravel(), eta.ravel()]), w.ravel()


def monomial_exponents(M):
    """(a, b) exponent pairs of xi^a eta^b for total degree <= M, constant
    first, grouped by total degree."""
    return [(a, d - a) for d in range(M + 1) for a in range(d, -1, -1)]


def eval_monomials(exps, pts):
    pts = np.asarray(pts, dtype=float)
    out = np.empty(pts.shape[:-1] + (len(exps),))
    for l, (a, b) in enumerate(exps):
        out[..., l] = pts[..., 0] ** a * pts[..., 1] ** b
    return out


def _dubiner_closed_form(M, pts):
    """Raw Dubiner values at strictly interior points (1 - eta > 0)."""
    xi, eta = pts[..., 0], pts[..., 1]
    b = 2.0 * eta - 1.0
    a = 2.0 * xi / (1.0 - eta) - 1.0
    vals = []
    for d in range(M + 1):
        for p in range(d, -1, -1):
            q = d - p
            vals.append(
                eval_jacobi(p, 0.0, 0.0, a)
                * (0.5 * (1.0 - b)) ** p
                * eval_jacobi(q, 2.0 * p + 1.0, 0.0, b)
            )
    return np.stack(vals, axis=-1)


class PolyBasis:
    """A set of 2D polynomials stored as monomial coefficients.

    ``coeff`` has shape (n_funcs, n_monomials) over :func:`monomial_exponents`
    of the basis degree.
    """

    def __init__(self, M, coeff):
        self.M = M
        self.exps = monomial_exponents(M)
        self.coeff = np.asarray(coeff, dtype=float)
        self.n = self.coeff.shape[0]
        # derivative coefficient tables d/dxi, d/deta
        idx = {e: i for i, e in enumerate(self.exps)}
        dxi = np.zeros((len(self.exps), len(self.exps)))
        deta = np.zeros_like(dxi)
        for i, (p, q) in enumerate(self.exps):
            if p > 0:
                dxi[idx[(p - 1, q)], i] = p
            if q > 0:
                deta[idx[(p, q - 1)], i] = q
        self._dxi = self.coeff @ dxi.T
        self._deta = self.coeff @ deta.T

    def eval(self, pts):
        """Values at points (..., 2) -> (..., n)."""
        return eval_monomials(self.exps, pts) @ self.coeff.T

    def grad(self, pts):
        """Gradients at points (..., 2) -> (..., n, 2)."""
        mono = eval_monomials(self.exps, pts)
        return np.stack([mono @ self._dxi.T, mono @ self._deta.T], axis=-1)


@lru_cache(maxsize=None)
def modal_basis(M):
    """Orthogonal modal basis on the unit triangle: first function identically
    one, the rest orthogonal with unit L2 norm (hence zero mean)."""
    pts, w = triangle_quadrature(2 * M + 2)
    vals = _dubiner_closed_form(M, pts)
    mono = eval_monomials(monomial_exponents(M), pts)
    # exact monomial representation (both spans equal P_M)
    coeff, *_ = np.linalg.lstsq(mono, vals, rcond=None)
    coeff = coeff.T
    norms = np.sqrt((w[:, None] * vals**2).sum(axis=0))
    coeff[0] /= coeff[0, 0]
    coeff[1:] /= norms[1:, None]
    basis = PolyBasis(M, coeff)
    basis.oscillation = _oscillation_matrix(basis, pts, w)
    return basis


def _oscillation_matrix(basis, pts, w):
    """Sigma_lm = sum over all partial derivatives of order 1..M of
    int_T (D^a phi_l)(D^a phi_m)."""
    M = basis.M
    exps = basis.exps
    idx = {e: i for i, e in enumerate(exps)}
    nmono = len(exps)
    dxi = np.zeros((nmono, nmono))
    deta = np.zeros_like(dxi)
    for i, (p, q) in enumerate(exps):
        if p > 0:
            dxi[idx[(p - 1, q)], i] = p
        if q > 0:
            deta[idx[(p, q - 1)], i] = q
    mono = eval_monomials(exps, pts)
    sig = np.zeros((basis.n, basis.n))
    layer = {(): basis.coeff.T}  # monomial-coeff columns per derivative word
    for _ in range(M):
        nxt = {}
        for word, C in layer.items():
            nxt[word + ("x",)] = dxi @ C
            nxt[word + ("y",)] = deta @ C
        # (x,y) and (y,x) are distinct words but equal operators; summing both
        # simply weights mixed derivatives by their multiplicity
        for C in nxt.values():
            V = mono @ C
            sig += np.einsum("p,pn,pm->nm", w, V, V)
        layer = nxt
    return 0.5 * (sig + sig.T)


def triangle_nodes(M):
    """Standard P_M interpolation nodes on the unit triangle."""
    if M == 1:
        pts = [(0, 0), (1, 0), (0, 1)]
    elif M == 2:
        pts = [(0, 0), (1, 0), (0, 1), (0.5, 0), (0.5, 0.5), (0, 0.5)]
    elif M == 3:
        t = 1.0 / 3.0
        pts = [
            (0, 0), (1, 0), (0, 1),
            (t, 0), (2 * t, 0),
            (2 * t, t), (t, 2 * t),
            (0, 2 * t), (0, t),
            (t, t),
        ]
    else:
        raise ValueError("polynomial degree must be 1, 2 or 3")
    return np.asarray(pts, dtype=float)


@lru_cache(maxsize=None)
def nodal_basis(M):
    """Lagrange basis through the P_M triangle nodes (monomial form)."""
    nodes = triangle_nodes(M)
    mb = modal_basis(M)
    V = mb.eval(nodes)  # V[i, l] = phi_l(node_i)
    coeff = np.linalg.solve(V.T, mb.coeff)
    basis = PolyBasis(M, coeff)
    basis.nodes = nodes
    return basis


@dataclass(frozen=True)
class TimeBasis:
    """Lagrange basis over M+1 Gauss-Legendre nodes in [0, 1]."""

    tau: np.ndarray     # nodes
    w: np.ndarray       # GL weights = diagonal of the time mass matrix
    coeff: np.ndarray   # (M+1, M+1) monomial coefficients, coeff[m, k] tau^k

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        powers = t[..., None] ** np.arange(self.coeff.shape[1])
        return powers @ self.coeff.T

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        k = np.arange(self.coeff.shape[1])
        dpow = np.zeros(t.shape + (len(k),))
        dpow[..., 1:] = k[1:] * t[..., None] ** (k[1:] - 1)
        return dpow @ self.coeff.T


@lru_cache(maxsize=None)
def time_basis(M):
    tau, w = gauss_legendre_01(M + 1)
    V = tau[:, None] ** np.arange(M + 1)
    coeff = np.linalg.inv(V).T
    return TimeBasis(tau=tau, w=w, coeff=coeff)


@dataclass
class SpaceTimeBasis:
    """Everything the element-local space-time predictor needs, built once
    per polynomial degree.  Space-time node (m, i) pairs time node m with
    spatial node i; arrays are laid out (..., M+1, n_space, ...).
    """

    M: int
    space: PolyBasis
    time: TimeBasis
    n_space: int
    n_time: int
    Ms: np.ndarray          # spatial mass matrix int l_i l_j
    Dxi: np.ndarray         # Dxi[i, j] = d l_j / d xi at node i
    Deta: np.ndarray
    K1t: np.ndarray         # time DG matrix L_k(1)L_l(1) - int L_k' L_l
    K1t_inv: np.ndarray
    Wt: np.ndarray          # K1t^{-1} Mt: the stiff-solve time coupling
    Wt_inv: np.ndarray      # Mt^{-1} K1t: source recovery
    Dt: np.ndarray          # Dt[m, n] = L_n'(tau_m)
    modal_at_nodes: np.ndarray   # phi_l(node_i): reconstruction -> nodal

    def eval_space(self, pts):
        return self.space.eval(pts)

    def eval_time(self, t):
        return self.time.eval(t)


@lru_cache(maxsize=None)
def spacetime_basis(M):
    sb = nodal_basis(M)
    tb = time_basis(M)
    nodes = sb.nodes
    n_s = len(nodes)
    pts, w = triangle_quadrature(2 * M)
    V = sb.eval(pts)
    Ms = np.einsum("p,pi,pj->ij", w, V, V)
    G = sb.grad(nodes)
    Dxi = G[..., 0]
    Deta = G[..., 1]
    n_t = M + 1
    Lt1 = tb.eval(np.array(1.0))
    # int_0^1 L_k' L_l via GL quadrature at the nodes (exact, degree 2M-1)
    Ld = tb.deriv(tb.tau)  # Ld[m, k] = L_k'(tau_m)
    K1t = np.outer(Lt1, Lt1) - np.einsum("m,mk,ml->kl", tb.w, Ld, tb.eval(tb.tau))
    K1t_inv = np.linalg.inv(K1t)
    Mt = np.diag(tb.w)
    Wt = K1t_inv @ Mt
    Wt_inv = np.linalg.inv(Wt)
    mb = modal_basis(M)
    return SpaceTimeBasis(
        M=M,
        space=sb,
        time=tb,
        n_space=n_s,
        n_time=n_t,
        Ms=Ms,
        Dxi=Dxi,
        Deta=Deta,
        K1t=K1t,
        K1t_inv=K1t_inv,
        Wt=Wt,
        Wt_inv=Wt_inv,
        Dt=Ld,
        modal_at_nodes=mb.eval(nodes),
    )
