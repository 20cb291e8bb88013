"""Ghost-state construction for domain boundaries.

Ghost traces are built pointwise from the interior predictor trace at each
space-time quadrature point of a boundary face; there are no geometric
mirror cells.  Periodic boundaries never reach this module (they are plain
interior faces of the torus connectivity).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import physics as ph
from .physics import MaterialModel
from .predictor import manifold_project, solve_strain_relaxation


@dataclass(frozen=True)
class MovingBoundary:
    """Prescribed boundary velocity; ``constant`` is the only shipped
    built-in (piston-type drives)."""

    vx: float = 0.0
    vy: float = 0.0

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack(
            [np.full(t.shape, self.vx), np.full(t.shape, self.vy)], axis=-1
        )

    def displacement(self, t):
        return np.array([self.vx, self.vy]) * t


@dataclass
class BoundarySpec:
    """Per-tag boundary behavior for one case."""

    moving: MovingBoundary = field(default_factory=MovingBoundary)
    traction_tau_factor: float = 1e-8   # tau1' = factor * dt


def _reflect(vec, n):
    vn = np.einsum("...i,...i->...", vec, n)
    return vec - 2.0 * vn[..., None] * n


def ghost_transmissive(q_in):
    return np.asarray(q_in, dtype=float).copy()


def ghost_wall(q_in, n):
    """Copy all fields, reflect velocity (and thermal impulse) about the
    boundary plane; n is the outward unit normal, given with 2 components."""
    q_in = np.asarray(q_in, dtype=float)
    n3 = np.zeros(q_in.shape[:-1] + (3,))
    n3[..., :2] = n
    g = q_in.copy()
    g[..., ph.MOM] = _reflect(q_in[..., ph.MOM], n3)
    g[..., ph.RJ] = _reflect(q_in[..., ph.RJ], n3)
    return g


def ghost_moving(q_in, n, v_b):
    """Impose the prescribed normal velocity: v_g = 2 (v_b.n) n - v_i, other
    primitive fields copied (total energy rebuilt so the pressure matches)."""
    q_in = np.asarray(q_in, dtype=float)
    n3 = np.zeros(q_in.shape[:-1] + (3,))
    n3[..., :2] = n
    vb3 = np.zeros_like(n3)
    vb3[..., :2] = v_b
    return _ghost_with_velocity(
        q_in, 2.0 * np.einsum("...i,...i->...", vb3, n3)[..., None] * n3
        - q_in[..., ph.MOM] / q_in[..., ph.RHO, None],
        reflect_J=n3,
    )


def _ghost_with_velocity(q_in, v_new, mat=None, reflect_J=None):
    rho = q_in[..., ph.RHO]
    g = q_in.copy()
    g[..., ph.MOM] = rho[..., None] * v_new
    if reflect_J is not None:
        g[..., ph.RJ] = _reflect(q_in[..., ph.RJ], reflect_J)
    # keep rho E consistent: swap the kinetic energy contribution
    v_old = q_in[..., ph.MOM] / rho[..., None]
    dk = 0.5 * (
        np.einsum("...i,...i->...", v_new, v_new)
        - np.einsum("...i,...i->...", v_old, v_old)
    )
    g[..., ph.EN] = q_in[..., ph.EN] + rho * dk
    return g


def ghost_free_traction(q_in, dt, mat: MaterialModel, tau_factor=1e-8):
    """Stress-free boundary: relax the distortion toward the zero-stress
    state over a pseudo relaxation time tau1' = tau_factor*dt (implicit
    single-step solve), extrapolate it across the face, and flip the sign of
    the pressure."""
    q_in = np.asarray(q_in, dtype=float)
    flat = q_in.reshape(-1, ph.NVAR)
    A_i = ph.distortion(flat)
    tau1p = tau_factor * dt
    Astar, ok = solve_strain_relaxation(
        A_i, np.asarray(dt, dtype=float), np.full(len(A_i), tau1p), A_i.copy()
    )
    if not np.all(ok):
        # stress-free state with matched determinant via polar rotation
        bad = ~ok
        Astar[bad] = manifold_project(A_i[bad])
    prim = ph.cons_to_prim(flat, mat, check=False)
    g = prim.copy()
    g[..., ph.DIST] = (2.0 * Astar - A_i).reshape(-1, 9)
    g[..., ph.EN] = -prim[..., ph.EN]
    out = ph.prim_to_cons(g, mat)
    return out.reshape(q_in.shape)


def ghost_state(tag, q_in, n, t, dt, mat: MaterialModel, spec: BoundarySpec):
    """Dispatch on the boundary tag; q_in are interior traces (..., 17) and
    n the outward unit face normals (..., 2)."""
    if tag == "transmissive":
        return ghost_transmissive(q_in)
    if tag == "wall":
        return ghost_wall(q_in, n)
    if tag == "moving":
        vb = spec.moving.velocity(t)
        return ghost_moving(q_in, n, vb)
    if tag == "free_traction":
        return ghost_free_traction(q_in, dt, mat, spec.traction_tau_factor)
    raise ValueError(f"unknown boundary tag {tag!r}")
