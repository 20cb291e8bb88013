"""Pointwise evaluations of the unified hyperbolic continuum model.

The evolved state has 17 components: density, momentum (3), the distortion
tensor (3x3, row-major), thermal impulse density (3) and total energy
density.  2D runs keep the full 3-vectors / 3x3 tensors with the
out-of-plane velocity and all z-derivatives equal to zero.

All functions broadcast over arbitrary leading axes: a state array has
shape (..., 17) and tensors are returned as (..., 3, 3).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

NVAR = 17

# component slices of the conserved/primitive layout
RHO = 0
MOM = slice(1, 4)       # rho*v   (velocity v in primitive layout)
DIST = slice(4, 13)     # distortion tensor A, row-major
RJ = slice(13, 16)      # rho*J   (thermal impulse J in primitive layout)
EN = 16                 # rho*E   (pressure p in primitive layout)

#: relaxation-time sentinel for "no relaxation"; sources that see it are
#: short-circuited to exactly zero rather than divided through.
INF_RELAXATION = 1.0e30

_I3 = np.eye(3)


class NonPhysicalState(ValueError):
    """Raised when a state leaves the admissible region (negative density,
    internal energy below the EOS floor, singular compression, ...)."""

    def __init__(self, message, data=None):
        super().__init__(message)
        self.data = data


@dataclass(frozen=True)
class MaterialModel:
    """Equation-of-state selector plus all material constants.

    ``eos`` is ``"ideal"`` or ``"mie_gruneisen"``.  ``tau1_mode`` is one of
    ``"constant"``, ``"from_viscosity"``, ``"power_law"``, ``"infinite"``;
    ``tau2_mode`` is ``"constant"`` or ``"infinite"``.
    """

    eos: str = "ideal"
    gamma: float = 1.4
    c_v: float = 1.0
    rho0: float = 1.0
    p0: float = 0.0
    c0: float = 1.0
    c_s: float = 0.0
    alpha: float = 0.0
    Gamma0: float = 0.0
    s_mg: float = 0.0
    sigma0: float = 0.0
    tau0: float = 0.0
    n_exp: float = 1.0
    tau1_mode: str = "infinite"
    tau1: float = INF_RELAXATION
    mu: float = 0.0
    tau2_mode: str = "infinite"
    tau2: float = INF_RELAXATION
    T0: float = 1.0

    def __post_init__(self):
        if self.eos not in ("ideal", "mie_gruneisen"):
            raise ValueError(f"unknown EOS {self.eos!r}")
        if self.rho0 <= 0.0:
            raise ValueError("reference density must be positive")
        if self.tau1_mode not in ("constant", "from_viscosity", "power_law", "infinite"):
            raise ValueError(f"unknown tau1 mode {self.tau1_mode!r}")
        if self.tau2_mode not in ("constant", "infinite"):
            raise ValueError(f"unknown tau2 mode {self.tau2_mode!r}")
        if self.tau1_mode == "constant" and not self.tau1 > 0.0:
            raise ValueError("tau1 must be positive")
        if self.tau2_mode == "constant" and not self.tau2 > 0.0:
            raise ValueError("tau2 must be positive")

    @property
    def tau1_resolved(self):
        """Strain relaxation time for the state-independent modes."""
        if self.tau1_mode == "constant":
            return self.tau1
        if self.tau1_mode == "from_viscosity":
            # mu = tau1 * rho0 * c_s^2 / 6
            return 6.0 * self.mu / (self.rho0 * self.c_s**2)
        if self.tau1_mode == "infinite":
            return INF_RELAXATION
        raise ValueError("power-law tau1 is state dependent; use relaxation_time()")

    @property
    def tau2_resolved(self):
        return self.tau2 if self.tau2_mode == "constant" else INF_RELAXATION

    @property
    def heat_conduction_active(self):
        return self.alpha > 0.0 and self.tau2_mode == "constant"

    def with_updates(self, **kw):
        return replace(self, **kw)


def tau2_from_conductivity(kappa, mat: MaterialModel):
    """Helper conversion kappa -> tau2 (unverified heuristic; the case files
    set tau2 directly and this is offered for convenience only)."""
    return kappa / (mat.alpha**2 * mat.T0 * mat.rho0)


# ---------------------------------------------------------------------------
# field accessors


def distortion(q):
    """The 3x3 distortion tensor view of a state array (..., 17)."""
    return q[..., DIST].reshape(q.shape[:-1] + (3, 3))


def velocity(q):
    return q[..., MOM] / q[..., RHO, None]


def metric_tensor(A):
    """G = A^T A."""
    return np.matmul(np.swapaxes(A, -1, -2), A)


def deviator(G):
    tr = np.einsum("...ii->...", G)
    return G - (tr / 3.0)[..., None, None] * _I3


def mesoscopic_energy(A, J, mat: MaterialModel):
    """Shear + thermal contribution to the specific energy (quadratic form)."""
    devG = deviator(metric_tensor(A))
    e_shear = 0.25 * mat.c_s**2 * np.einsum("...ij,...ij->...", devG, devG)
    e_thermal = 0.5 * mat.alpha**2 * np.einsum("...i,...i->...", J, J)
    return e_shear + e_thermal


# ---------------------------------------------------------------------------
# equation of state


def _mg_f(nu, mat: MaterialModel, check=True):
    den = nu - mat.s_mg * (nu - 1.0)
    if np.any(den <= 0.0):
        if check:
            raise NonPhysicalState(
                "singular compression in Mie-Gruneisen EOS", data=nu
            )
        den = np.where(den > 0.0, den, np.nan)
    return (nu - 1.0) * (nu - 0.5 * mat.Gamma0 * (nu - 1.0)) / den**2


def _mg_fprime(nu, mat: MaterialModel):
    # d f / d nu, used by the EOS sound speed
    g, s = mat.Gamma0, mat.s_mg
    den = nu - s * (nu - 1.0)
    num = (nu - 1.0) * (nu - 0.5 * g * (nu - 1.0))
    dnum = (nu - 0.5 * g * (nu - 1.0)) + (nu - 1.0) * (1.0 - g)
    return dnum / den**2 - 2.0 * num * (1.0 - s) / den**3


def internal_energy(rho, p, mat: MaterialModel, check=True):
    """Specific internal (equilibrium) energy e1(rho, p)."""
    rho = np.asarray(rho, dtype=float)
    if check and np.any(rho <= 0.0):
        raise NonPhysicalState("non-positive density", data=rho)
    if mat.eos == "ideal":
        return p / (rho * (mat.gamma - 1.0))
    nu = rho / mat.rho0
    return (p - mat.rho0 * mat.c0**2 * _mg_f(nu, mat, check)) / (mat.rho0 * mat.Gamma0)


def eos_pressure(rho, e1, mat: MaterialModel, check=True):
    """Inverse of :func:`internal_energy`."""
    if mat.eos == "ideal":
        return rho * (mat.gamma - 1.0) * e1
    nu = np.asarray(rho, dtype=float) / mat.rho0
    return mat.rho0 * mat.Gamma0 * e1 + mat.rho0 * mat.c0**2 * _mg_f(nu, mat, check)


def internal_energy_floor(rho, mat: MaterialModel):
    """Lowest admissible e1 for the ideal gas (zero, i.e. non-negative
    pressure).  Mie-Gruneisen solids support tension (negative pressure is a
    legitimate elastic state, and the free-traction boundary constructs such
    states on purpose), so no energy floor applies there; admissibility is
    the branch condition of f(nu) checked inside the EOS itself."""
    rho = np.asarray(rho, dtype=float)
    if mat.eos == "ideal":
        return np.zeros_like(rho)
    return np.full(rho.shape, -np.inf)


def temperature(rho, p, mat: MaterialModel):
    """Temperature T = e1 / c_v.  Only defined for the ideal-gas EOS; the
    shipped solid cases run with J = 0 and no heat conduction."""
    if mat.eos != "ideal":
        raise NonPhysicalState(
            "temperature requested under Mie-Gruneisen EOS; heat conduction "
            "is only supported with the ideal-gas EOS"
        )
    return p / (np.asarray(rho, dtype=float) * (mat.gamma - 1.0) * mat.c_v)


# ---------------------------------------------------------------------------
# state conversions


def total_energy(prim, mat: MaterialModel):
    """rho*E from a primitive state (rho, v, A, J, p)."""
    rho = prim[..., RHO]
    v = prim[..., MOM]
    A = distortion(prim)
    J = prim[..., RJ]
    p = prim[..., EN]
    e1 = internal_energy(rho, p, mat)
    e2 = mesoscopic_energy(A, J, mat)
    e3 = 0.5 * np.einsum("...i,...i->...", v, v)
    return rho * (e1 + e2 + e3)


def prim_to_cons(prim, mat: MaterialModel):
    prim = np.asarray(prim, dtype=float)
    q = prim.copy()
    rho = prim[..., RHO]
    q[..., MOM] = rho[..., None] * prim[..., MOM]
    q[..., RJ] = rho[..., None] * prim[..., RJ]
    q[..., EN] = total_energy(prim, mat)
    return q


def pressure_from_conserved(q, mat: MaterialModel, check=True):
    """Pressure by EOS inversion after subtracting kinetic and mesoscopic
    energy from the total."""
    rho = q[..., RHO]
    if check and np.any(rho <= 0.0):
        raise NonPhysicalState("non-positive density", data=q)
    v = velocity(q)
    J = q[..., RJ] / rho[..., None]
    e1 = (
        q[..., EN] / rho
        - mesoscopic_energy(distortion(q), J, mat)
        - 0.5 * np.einsum("...i,...i->...", v, v)
    )
    if check:
        floor = internal_energy_floor(rho, mat)
        bad = e1 < floor - 1e-13 * np.maximum(1.0, np.abs(e1))
        if np.any(bad):
            raise NonPhysicalState("internal energy below EOS floor", data=q[bad])
    return eos_pressure(rho, e1, mat, check)


def cons_to_prim(q, mat: MaterialModel, check=True):
    q = np.asarray(q, dtype=float)
    prim = q.copy()
    rho = q[..., RHO]
    prim[..., MOM] = q[..., MOM] / rho[..., None]
    prim[..., RJ] = q[..., RJ] / rho[..., None]
    prim[..., EN] = pressure_from_conserved(q, mat, check=check)
    return prim


def make_primitive(rho, v, A, J, p):
    """Assemble a primitive state array from components (broadcasting)."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros(rho.shape + (NVAR,))
    out[..., RHO] = rho
    out[..., MOM] = v
    out[..., DIST] = np.asarray(A, dtype=float).reshape(np.shape(A)[:-2] + (9,))
    out[..., RJ] = J
    out[..., EN] = p
    return out


# ---------------------------------------------------------------------------
# thermodynamic forces, sources


def thermo_forces(prim, mat: MaterialModel):
    """psi = dE/dA, H = dE/dJ, the shear stress tensor, heat flux and
    temperature for a primitive state.

    Returns a dict with keys ``psi`` (..,3,3), ``H`` (..,3), ``sigma``
    (..,3,3), ``q`` (..,3), ``T`` (..,).
    """
    rho = prim[..., RHO]
    A = distortion(prim)
    J = prim[..., RJ]
    G = metric_tensor(A)
    devG = deviator(G)
    psi = mat.c_s**2 * np.matmul(A, devG)
    sigma = -rho[..., None, None] * mat.c_s**2 * np.matmul(G, devG)
    H = mat.alpha**2 * J
    if mat.heat_conduction_active:
        T = temperature(rho, prim[..., EN], mat)
        qheat = mat.alpha**2 * T[..., None] * J
    else:
        T = np.zeros_like(rho)
        qheat = np.zeros_like(J)
    return {"psi": psi, "H": H, "sigma": sigma, "q": qheat, "T": T}


def shear_stress(q, mat: MaterialModel):
    """sigma = -rho c_s^2 G dev(G) straight from a conserved state."""
    rho = q[..., RHO]
    G = metric_tensor(distortion(q))
    return -rho[..., None, None] * mat.c_s**2 * np.matmul(G, deviator(G))


def stress_intensity(sigma):
    """Von-Mises-type shear stress intensity of a stress tensor."""
    s11, s22, s33 = sigma[..., 0, 0], sigma[..., 1, 1], sigma[..., 2, 2]
    s12, s13, s23 = sigma[..., 0, 1], sigma[..., 0, 2], sigma[..., 1, 2]
    return np.sqrt(
        0.5
        * (
            (s11 - s22) ** 2
            + (s22 - s33) ** 2
            + (s33 - s11) ** 2
            + 6.0 * (s12**2 + s13**2 + s23**2)
        )
    )


def relaxation_time(prim, mat: MaterialModel):
    """Resolved strain relaxation time tau1 for a (batch of) states.

    Power-law loading uses the stress intensity of the current state; a
    stress-free state returns the "infinite" sentinel (pure elastic
    response), not an error.
    """
    rho = prim[..., RHO]
    if mat.tau1_mode != "power_law":
        return np.full(rho.shape, mat.tau1_resolved)
    G = metric_tensor(distortion(prim))
    sigma = -rho[..., None, None] * mat.c_s**2 * np.matmul(G, deviator(G))
    sI = stress_intensity(sigma)
    out = np.full(rho.shape, INF_RELAXATION)
    pos = sI > 0.0
    ratio = np.ones_like(sI)
    np.divide(mat.sigma0, sI, out=ratio, where=pos)
    with np.errstate(over="ignore"):
        out[pos] = np.minimum(mat.tau0 * ratio[pos] ** mat.n_exp, INF_RELAXATION)
    return np.minimum(out, INF_RELAXATION)


def strain_source(A, tau1):
    """Right-hand side of the distortion evolution:
    -3/tau1 |A|^(5/3) A dev(A^T A).  ``tau1`` broadcasts over the batch."""
    tau1 = np.asarray(tau1, dtype=float)
    detA = np.linalg.det(A)
    devG = deviator(metric_tensor(A))
    S = np.matmul(A, devG)
    fac = -3.0 * np.sign(detA) * np.abs(detA) ** (5.0 / 3.0) / tau1
    out = np.asarray(fac[..., None, None] * S)
    mask = np.broadcast_to((tau1 >= INF_RELAXATION)[..., None, None], out.shape)
    out[mask] = 0.0
    return out


def thermal_source(rho, rhoJ, T, mat: MaterialModel):
    """Right-hand side of the thermal-impulse evolution:
    -(T/T0)(rho0/rho) rhoJ / tau2."""
    tau2 = mat.tau2_resolved
    if tau2 >= INF_RELAXATION:
        return np.zeros_like(rhoJ)
    coef = -(T / mat.T0) * (mat.rho0 / rho) / tau2
    return coef[..., None] * rhoJ


def relaxation_sources(prim, mat: MaterialModel):
    """(S_A, S_rhoJ) as they enter the distortion and thermal-impulse
    equations, for a primitive state."""
    A = distortion(prim)
    tau1 = relaxation_time(prim, mat)
    S_A = strain_source(A, tau1)
    rho = prim[..., RHO]
    rhoJ = rho[..., None] * prim[..., RJ]
    if mat.heat_conduction_active:
        T = temperature(rho, prim[..., EN], mat)
    else:
        T = np.zeros_like(rho)
    S_rhoJ = thermal_source(rho, rhoJ, T, mat)
    return S_A, S_rhoJ


def source_vector(q, mat: MaterialModel):
    """Full 17-component algebraic source for conserved states (zero in the
    conservative rows)."""
    prim = cons_to_prim(q, mat, check=False)
    S_A, S_rhoJ = relaxation_sources(prim, mat)
    out = np.zeros_like(q)
    out[..., DIST] = S_A.reshape(S_A.shape[:-2] + (9,))
    out[..., RJ] = S_rhoJ
    return out


# ---------------------------------------------------------------------------
# fluxes and the non-conservative part


def flux_tensor(q, mat: MaterialModel, p=None, sigma=None, T=None):
    """Conservative flux F with shape (..., 17, 3); column k is the flux in
    direction x_k.  Pass precomputed p/sigma/T to skip the EOS inversion."""
    rho = q[..., RHO]
    v = velocity(q)
    A = distortion(q)
    if p is None:
        p = pressure_from_conserved(q, mat)
    if sigma is None:
        sigma = shear_stress(q, mat)
    F = np.zeros(q.shape[:-1] + (NVAR, 3))
    F[..., RHO, :] = q[..., MOM]
    # momentum: rho v_i v_k + p delta_ik - sigma_ik
    Fm = q[..., MOM, None] * v[..., None, :] - sigma
    for k in range(3):
        Fm[..., k, k] += p
    F[..., MOM, :] = Fm
    # distortion row (i,k): flux nonzero only in direction k, value (A v)_i
    Av = np.matmul(A, v[..., None])[..., 0]
    for i in range(3):
        for k in range(3):
            F[..., 4 + 3 * i + k, k] = Av[..., i]
    # thermal impulse: rho J_i v_k + T delta_ik
    heat = mat.heat_conduction_active
    if T is None:
        T = temperature(rho, p, mat) if heat else None
    FJ = q[..., RJ, None] * v[..., None, :]
    if T is not None:
        for k in range(3):
            FJ[..., k, k] += T
    F[..., RJ, :] = FJ
    # energy: v_k (rho E + p) - (sigma v)_k + q_k   (sigma symmetric)
    sv = np.matmul(sigma, v[..., None])[..., 0]
    F[..., EN, :] = (q[..., EN] + p)[..., None] * v - sv
    if heat:
        J = q[..., RJ] / rho[..., None]
        F[..., EN, :] += mat.alpha**2 * T[..., None] * J
    return F


def nonconservative_product(q, grad):
    """B(Q)·∇Q for conserved states.  ``grad`` holds the spatial gradient of
    every component, shape (..., 17, 3); only the nine distortion rows of the
    result are nonzero: v_j (dA_ik/dx_j - dA_ij/dx_k)."""
    v = velocity(q)
    gA = grad[..., DIST, :].reshape(grad.shape[:-2] + (3, 3, 3))
    # term1_ik = v_j dA_ik/dx_j ; term2_ik = v_j dA_ij/dx_k
    term1 = np.einsum("...j,...ikj->...ik", v, gA)
    term2 = np.einsum("...j,...ijk->...ik", v, gA)
    out = np.zeros_like(q)
    out[..., DIST] = (term1 - term2).reshape(q.shape[:-1] + (9,))
    return out


def ncp_matrix_normal(q, n):
    """(B(Q)·n) restricted to the distortion block: the 9x9 matrix acting on
    the A-components of a jump, for unit spatial normal n.

    Row (i,k), column (i',j):  delta_ii' (delta_jk (v·n) - v_j n_k).
    """
    v = velocity(q)
    vn = np.einsum("...j,...j->...", v, n)
    blk = vn[..., None, None] * _I3 - np.einsum("...j,...k->...kj", v, n)
    out = np.zeros(q.shape[:-1] + (9, 9))
    for i in range(3):
        out[..., 3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = blk
    return out


# ---------------------------------------------------------------------------
# wave speeds


def sound_speed(q, mat: MaterialModel, p=None):
    """Model sound speed: EOS acoustic part plus the shear-wave term, plus the
    heat-wave majorant when heat conduction is active."""
    rho = q[..., RHO]
    if p is None:
        p = pressure_from_conserved(q, mat)
    if mat.eos == "ideal":
        c2 = mat.gamma * p / rho
    else:
        nu = rho / mat.rho0
        c2 = mat.c0**2 * _mg_fprime(nu, mat) + p * mat.rho0 * mat.Gamma0 / rho**2
        c2 = np.maximum(c2, 0.0)
    c2 = np.asarray(c2, dtype=float)
    c2 = c2 + (4.0 / 3.0) * mat.c_s**2
    if mat.heat_conduction_active:
        c2 = c2 + mat.alpha**2
    if np.any(c2 <= 0.0):
        raise NonPhysicalState("non-positive sound speed radicand", data=q)
    return np.sqrt(c2)


def max_signal_speed(q, mat: MaterialModel, n, V=None, p=None):
    """|v·n - V·n| + c for unit spatial normal n and mesh velocity V."""
    v = velocity(q)
    vn = np.einsum("...i,...i->...", v[..., :2] if np.shape(n)[-1] == 2 else v, n)
    if V is not None:
        vn = vn - np.einsum("...i,...i->...", np.asarray(V, dtype=float), n)
    return np.abs(vn) + sound_speed(q, mat, p=p)
