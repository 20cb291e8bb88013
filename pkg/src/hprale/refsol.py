"""Exact and high-resolution reference solutions used by the verification
suite: the convected isentropic vortex, the Taylor-Green vortex, the
stationary viscous shock profile (Prandtl 3/4), and a 1D cylindrical Euler
solver for the explosion problem.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np
from scipy.integrate import solve_ivp

from . import physics as ph


# ---------------------------------------------------------------------------
# isentropic vortex (gamma = 1.4, strength 5, background (1,1,1,1))


def vortex_primitives(x, t=0.0, gamma=1.4, eps=5.0, domain=10.0):
    """Primitive fields of the convected vortex at time t: the initial data
    shifted by the background velocity (1,1) on the periodic square."""
    x = np.asarray(x, dtype=float)
    xs = np.mod(x[..., 0] - t - 5.0 + 0.5 * domain, domain) - 0.5 * domain
    ys = np.mod(x[..., 1] - t - 5.0 + 0.5 * domain, domain) - 0.5 * domain
    r2 = xs**2 + ys**2
    dT = -(gamma - 1.0) * eps**2 / (8.0 * gamma * np.pi**2) * np.exp(1.0 - r2)
    rho = (1.0 + dT) ** (1.0 / (gamma - 1.0))
    p = (1.0 + dT) ** (gamma / (gamma - 1.0))
    du = eps / (2.0 * np.pi) * np.exp(0.5 * (1.0 - r2))
    u = 1.0 - du * ys
    v = 1.0 + du * xs
    return rho, u, v, p


def vortex_state(x, t, mat):
    """Conserved 17-component state of the vortex (distortion set to the
    density-compatible isotropic tensor, thermal impulse zero)."""
    rho, u, v, p = vortex_primitives(x, t, gamma=mat.gamma)
    vel = np.stack([u, v, np.zeros_like(u)], axis=-1)
    A = np.cbrt(rho)[..., None, None] * np.eye(3)
    J = np.zeros_like(vel)
    prim = ph.make_primitive(rho, vel, A, J, p)
    return ph.prim_to_cons(prim, mat)


# ---------------------------------------------------------------------------
# Taylor-Green vortex


def taylor_green_exact(x, t, nu, gamma=1.4, C=None):
    """(u, v, p) of the incompressible Taylor-Green solution."""
    x = np.asarray(x, dtype=float)
    if C is None:
        C = 100.0 / gamma
    decay = np.exp(-2.0 * nu * t)
    u = np.sin(x[..., 0]) * np.cos(x[..., 1]) * decay
    v = -np.cos(x[..., 0]) * np.sin(x[..., 1]) * decay
    p = C + 0.25 * (np.cos(2.0 * x[..., 0]) + np.cos(2.0 * x[..., 1])) * decay**2
    return u, v, p


# ---------------------------------------------------------------------------
# viscous shock (Becker solution, Pr = 3/4, constant viscosity)


class BeckerShock:
    """Stationary Navier-Stokes shock profile at Prandtl number 3/4 shifted
    so the shock travels with speed Ms*c0 into a medium at rest.

    Upstream (ahead of the shock, at rest): rho0, p0 = rho0 c0^2/gamma.
    The internal ODE is integrated once at high accuracy over the layer and
    cached as an interpolation table.
    """

    def __init__(self, Ms=2.0, mu=2e-2, gamma=1.4, rho0=1.0, c0=1.0):
        self.Ms, self.mu, self.gamma = Ms, mu, gamma
        self.rho0, self.c0 = rho0, c0
        self.p0 = rho0 * c0**2 / gamma
        g = gamma
        # shock-frame: flow speed u1 = Ms c0 upstream, u2 downstream
        self.u1 = Ms * c0
        self.u2 = self.u1 * ((g - 1.0) * Ms**2 + 2.0) / ((g + 1.0) * Ms**2)
        self.m = rho0 * self.u1
        self.P = self.m * self.u1 + self.p0          # momentum flux
        self.H0 = g / (g - 1.0) * self.p0 / rho0 + 0.5 * self.u1**2
        self._build_table()

    def _g(self, u):
        # (4/3) mu du/dx in the shock frame (stagnation enthalpy constant)
        g = self.gamma
        p = (self.m / u) * (g - 1.0) / g * (self.H0 - 0.5 * u**2)
        return self.m * u + p - self.P

    def _build_table(self):
        um = 0.5 * (self.u1 + self.u2)
        coef = 3.0 / (4.0 * self.mu)

        def rhs(x, u):
            return coef * self._g(u)

        du = self.u1 - self.u2
        span = 400.0 * self.mu
        fwd = solve_ivp(rhs, (0.0, span), [um], rtol=1e-12, atol=1e-14 * du,
                        dense_output=True, max_step=span / 50)
        bwd = solve_ivp(rhs, (0.0, -span), [um], rtol=1e-12, atol=1e-14 * du,
                        dense_output=True, max_step=span / 50)
        xs = np.linspace(-span, span, 4001)
        us = np.where(
            xs >= 0.0, fwd.sol(np.clip(xs, 0, span))[0], bwd.sol(np.clip(xs, -span, 0))[0]
        )
        us = np.clip(us, self.u2, self.u1)
        us = np.minimum.accumulate(us)      # provably monotone profile
        # center the table on the density midpoint (the conventional shock
        # position), not the velocity midpoint of the integration
        rho_mid = 0.5 * (self.rho0 + self.m / self.u2)
        xs = xs - np.interp(self.m / rho_mid, us[::-1], xs[::-1])
        self._xs, self._us = xs, us
        self.span = span

    def shock_frame(self, x):
        """(rho, u, p, sigma11) in the frame of the standing shock; flow runs
        in +x, upstream on the left."""
        x = np.asarray(x, dtype=float)
        u = np.interp(x, self._xs, self._us, left=self.u1, right=self.u2)
        rho = self.m / u
        g = self.gamma
        p = rho * (g - 1.0) / g * (self.H0 - 0.5 * u**2)
        sig = self.m * u + p - self.P     # = (4/3) mu du/dx
        return rho, u, p, sig

    def lab_frame(self, x, t, x0=0.25):
        """Traveling-shock fields: shock initially at x0 moving right with
        speed Ms*c0 into the medium at rest (which lies ahead, to the
        right)."""
        s = self.Ms * self.c0
        xi = -(np.asarray(x, dtype=float) - x0 - s * t)   # mirrored coordinate
        rho, u_sf, p, sig = self.shock_frame(xi)
        u_lab = s - u_sf
        return rho, u_lab, p, sig

    def flux_constancy(self):
        """Max deviation of the three stationary conservation fluxes along
        the integrated profile (consistency check of the oracle)."""
        x = np.linspace(-self.span, self.span, 2001)
        rho, u, p, sig = self.shock_frame(x)
        g = self.gamma
        mass = rho * u
        mom = rho * u**2 + p - sig
        # Pr = 3/4: total enthalpy flux is algebraically constant; energy
        # flux constancy reduces to it
        H = g / (g - 1.0) * p / rho + 0.5 * u**2
        return (
            np.abs(mass - self.m).max() / self.m,
            np.abs(mom - self.P).max() / self.P,
            np.abs(H - self.H0).max() / self.H0,
        )


# ---------------------------------------------------------------------------
# 1D cylindrical Euler reference (MUSCL-Hancock + Rusanov)


def _minmod(a, b):
    return np.where(a * b <= 0.0, 0.0, np.where(np.abs(a) < np.abs(b), a, b))


def _euler_flux(U, gamma):
    rho = U[:, 0]
    u = U[:, 1] / rho
    E = U[:, 2]
    p = (gamma - 1.0) * (E - 0.5 * rho * u**2)
    return np.column_stack([U[:, 1], U[:, 1] * u + p, u * (E + p)]), p, u


def radial_euler_reference(rho_in, p_in, rho_out, p_out, r_split=0.5,
                           t_final=0.2, n_cells=15000, gamma=1.4,
                           geometric=True, cfl=0.9, cache_dir=None):
    """Second-order MUSCL-Hancock + Rusanov solve of the 1D Euler equations
    with the cylindrical geometric source on r in [0, 1]; reflective at the
    axis, transmissive outside.  Returns (r_centers, rho, u, p)."""
    key = hashlib.sha256(
        repr((rho_in, p_in, rho_out, p_out, r_split, t_final, n_cells, gamma,
              geometric, cfl)).encode()
    ).hexdigest()[:16]
    if cache_dir:
        path = os.path.join(cache_dir, f"radial_ref_{key}.npz")
        if os.path.exists(path):
            z = np.load(path)
            return z["r"], z["rho"], z["u"], z["p"]
    dr = 1.0 / n_cells
    r = (np.arange(n_cells) + 0.5) * dr
    rho = np.where(r <= r_split, rho_in, rho_out)
    p = np.where(r <= r_split, p_in, p_out)
    U = np.column_stack([rho, np.zeros(n_cells), p / (gamma - 1.0)])

    def sources(U, p, u):
        if not geometric:
            return np.zeros_like(U)
        rho = U[:, 0]
        E = U[:, 2]
        return -np.column_stack([rho * u, rho * u**2, u * (E + p)]) / r

    t = 0.0
    while t < t_final - 1e-15:
        F, p_, u_ = _euler_flux(U, gamma)
        c = np.sqrt(gamma * p_ / U[:, 0])
        dt = min(cfl * dr / (np.abs(u_) + c).max(), t_final - t)
        # ghost cells: reflective left, transmissive right
        Ug = np.vstack([U[0] * [1, -1, 1], U, U[-1]])
        dU = _minmod(Ug[1:-1] - Ug[:-2], Ug[2:] - Ug[1:-1])
        UL = U - 0.5 * dU
        UR = U + 0.5 * dU
        # half-step evolution including the source
        FL, _, _ = _euler_flux(UL, gamma)
        FR, _, _ = _euler_flux(UR, gamma)
        Uh = U - 0.5 * dt / dr * (FR - FL) + 0.5 * dt * sources(U, p_, u_)
        ULh = Uh - 0.5 * dU
        URh = Uh + 0.5 * dU
        # interface states with boundary ghosts
        Lst = np.vstack([URh[0] * [1, -1, 1], URh])    # left of interface
        Rst = np.vstack([ULh, URh[-1]])                # right of interface
        FLs, pL, uL = _euler_flux(Lst, gamma)
        FRs, pR, uR = _euler_flux(Rst, gamma)
        lam = np.maximum(
            np.abs(uL) + np.sqrt(gamma * np.maximum(pL, 1e-300) / Lst[:, 0]),
            np.abs(uR) + np.sqrt(gamma * np.maximum(pR, 1e-300) / Rst[:, 0]),
        )
        Fn = 0.5 * (FLs + FRs) - 0.5 * lam[:, None] * (Rst - Lst)
        Fh, ph_, uh_ = _euler_flux(Uh, gamma)
        U = U - dt / dr * (Fn[1:] - Fn[:-1]) + dt * sources(Uh, ph_, uh_)
        t += dt
    F, p_, u_ = _euler_flux(U, gamma)
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        np.savez(os.path.join(cache_dir, f"radial_ref_{key}.npz"),
                 r=r, rho=U[:, 0], u=u_, p=p_)
    return r, U[:, 0], u_, p_


def exact_riemann_1d(rhoL, uL, pL, rhoR, uR, pR, x_over_t, gamma=1.4):
    """Exact solution of the 1D Euler Riemann problem sampled at x/t (used
    as an independent oracle for the planar-limit check of the radial
    solver)."""
    g = gamma
    cL = np.sqrt(g * pL / rhoL)
    cR = np.sqrt(g * pR / rhoR)

    def f_side(p, rho_k, p_k, c_k):
        if p > p_k:  # shock
            A = 2.0 / ((g + 1.0) * rho_k)
            B = (g - 1.0) / (g + 1.0) * p_k
            return (p - p_k) * np.sqrt(A / (p + B))
        return 2.0 * c_k / (g - 1.0) * ((p / p_k) ** ((g - 1.0) / (2 * g)) - 1.0)

    lo, hi = 1e-12, 10.0 * max(pL, pR)
    for _ in range(200):
        p = 0.5 * (lo + hi)
        if f_side(p, rhoL, pL, cL) + f_side(p, rhoR, pR, cR) + (uR - uL) > 0.0:
            hi = p
        else:
            lo = p
    pstar = 0.5 * (lo + hi)
    ustar = 0.5 * (uL + uR) + 0.5 * (
        f_side(pstar, rhoR, pR, cR) - f_side(pstar, rhoL, pL, cL)
    )

    def sample(s):
        if s <= ustar:  # left side
            if pstar > pL:  # left shock
                SL = uL - cL * np.sqrt((g + 1) / (2 * g) * pstar / pL + (g - 1) / (2 * g))
                if s < SL:
                    return rhoL, uL, pL
                rr = rhoL * ((pstar / pL + (g - 1) / (g + 1)) /
                             ((g - 1) / (g + 1) * pstar / pL + 1))
                return rr, ustar, pstar
            cstar = cL * (pstar / pL) ** ((g - 1) / (2 * g))
            if s < uL - cL:
                return rhoL, uL, pL
            if s > ustar - cstar:
                rr = rhoL * (pstar / pL) ** (1 / g)
                return rr, ustar, pstar
            u = 2 / (g + 1) * (cL + (g - 1) / 2 * uL + s)
            c = 2 / (g + 1) * (cL + (g - 1) / 2 * (uL - s))
            rr = rhoL * (c / cL) ** (2 / (g - 1))
            return rr, u, pL * (c / cL) ** (2 * g / (g - 1))
        # right side mirrored
        if pstar > pR:
            SR = uR + cR * np.sqrt((g + 1) / (2 * g) * pstar / pR + (g - 1) / (2 * g))
            if s > SR:
                return rhoR, uR, pR
            rr = rhoR * ((pstar / pR + (g - 1) / (g + 1)) /
                         ((g - 1) / (g + 1) * pstar / pR + 1))
            return rr, ustar, pstar
        cstar = cR * (pstar / pR) ** ((g - 1) / (2 * g))
        if s > uR + cR:
            return rhoR, uR, pR
        if s < ustar + cstar:
            rr = rhoR * (pstar / pR) ** (1 / g)
            return rr, ustar, pstar
        u = 2 / (g + 1) * (-cR + (g - 1) / 2 * uR + s)
        c = 2 / (g + 1) * (cR - (g - 1) / 2 * (uR - s))
        rr = rhoR * (c / cR) ** (2 / (g - 1))
        return rr, u, pR * (c / cR) ** (2 * g / (g - 1))

    out = np.array([sample(float(s)) for s in np.atleast_1d(x_over_t)])
    return out[:, 0], out[:, 1], out[:, 2]
