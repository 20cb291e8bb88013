"""Pointwise model evaluations: state conversions, EOS, forces, sources,
fluxes, wave speeds.  Derived expectations come from independent oracles
(finite differences, dense matrix algebra, index-notation sums)."""

import numpy as np
import pytest

from hprale import physics as ph
from hprale.physics import INF_RELAXATION, MaterialModel, NonPhysicalState

COPPER = MaterialModel(
    eos="mie_gruneisen", rho0=8.930, p0=0.0, c0=0.394, c_s=0.219,
    Gamma0=2.00, s_mg=1.480, c_v=4e-4, tau1_mode="infinite",
)
GAS = MaterialModel(eos="ideal", gamma=1.4, c_v=2.5, rho0=1.0, c_s=0.5,
                    tau1_mode="constant", tau1=1.0)


def random_states(n, rng, mat=GAS, scale=0.3):
    rho = 1.0 + 0.5 * rng.random(n)
    if mat.eos == "mie_gruneisen":
        rho = mat.rho0 * (1.0 + 0.1 * (rng.random(n) - 0.5))
    v = scale * rng.standard_normal((n, 3))
    A = np.cbrt(rho / mat.rho0)[:, None, None] * np.eye(3) \
        + 0.1 * rng.standard_normal((n, 3, 3))
    flip = np.linalg.det(A) <= 0.05
    A[flip] = np.cbrt(rho / mat.rho0)[flip, None, None] * np.eye(3)
    J = scale * rng.standard_normal((n, 3))
    p = 0.5 + rng.random(n)
    return ph.make_primitive(rho, v, A, J, p)


class TestTotalEnergy:
    def test_ideal_rest_state(self):
        prim = ph.make_primitive(
            np.array(1.0), np.zeros(3), np.eye(3), np.zeros(3), np.array(1 / 1.4)
        )
        rhoE = ph.total_energy(prim, GAS)
        assert rhoE == pytest.approx(1.0 / (1.4 * 0.4), rel=1e-14)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            th = rng.uniform(0, 2 * np.pi)
            ax = rng.standard_normal(3)
            ax /= np.linalg.norm(ax)
            K = np.array([[0, -ax[2], ax[1]], [ax[2], 0, -ax[0]], [-ax[1], ax[0], 0]])
            R = np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * K @ K
            A = np.eye(3) + 0.2 * rng.standard_normal((3, 3))
            J = rng.standard_normal(3)
            e_base = ph.mesoscopic_energy(A, J, GAS)
            e_rot = ph.mesoscopic_energy(R @ A, J, GAS)
            assert e_rot == pytest.approx(e_base, rel=1e-12, abs=1e-15)

    def test_mie_gruneisen_reference_state(self):
        # at the reference density with p = p0 = 0 the internal energy is 0
        e1 = ph.internal_energy(COPPER.rho0, COPPER.p0, COPPER)
        assert e1 == pytest.approx(0.0, abs=1e-15)
        prim = ph.make_primitive(
            np.array(COPPER.rho0), np.zeros(3), np.eye(3), np.zeros(3),
            np.array(COPPER.p0),
        )
        assert ph.total_energy(prim, COPPER) == pytest.approx(0.0, abs=1e-14)

    def test_singular_compression_raises(self):
        # nu - s(nu-1) <= 0 for nu ~ 3.1 at s = 1.48
        with pytest.raises(NonPhysicalState):
            ph.internal_energy(COPPER.rho0 * 3.2, 0.0, COPPER)


class TestPressureInversion:
    def test_round_trip_rest(self):
        prim = ph.make_primitive(
            np.array(1.0), np.zeros(3), np.eye(3), np.zeros(3), np.array(1 / 1.4)
        )
        q = ph.prim_to_cons(prim, GAS)
        assert ph.pressure_from_conserved(q, GAS) == pytest.approx(1 / 1.4, abs=1e-14)

    def test_kinetic_subtraction(self):
        prim = ph.make_primitive(
            np.array(1.0), np.array([1.0, 1.0, 0.0]), np.eye(3), np.zeros(3),
            np.array(1 / 1.4),
        )
        q = ph.prim_to_cons(prim, GAS)
        assert q[..., ph.EN] == pytest.approx(1.0 + 1 / (1.4 * 0.4), rel=1e-14)
        assert ph.pressure_from_conserved(q, GAS) == pytest.approx(1 / 1.4, abs=1e-14)

    @pytest.mark.parametrize("mat", [GAS, COPPER], ids=["ideal", "mg"])
    def test_round_trip_random(self, mat):
        rng = np.random.default_rng(2)
        prim = random_states(1000, rng, mat)
        q = ph.prim_to_cons(prim, mat)
        back = ph.cons_to_prim(q, mat)
        err = np.abs(back - prim) / np.maximum(1.0, np.abs(prim))
        assert err.max() < 1e-12

    def test_floor_violation_raises(self):
        prim = ph.make_primitive(
            np.array(1.0), np.zeros(3), np.eye(3), np.zeros(3), np.array(1 / 1.4)
        )
        q = ph.prim_to_cons(prim, GAS)
        q[..., ph.EN] -= 10.0
        with pytest.raises(NonPhysicalState):
            ph.pressure_from_conserved(q, GAS)


class TestThermoForces:
    def test_equilibrium_distortion(self):
        prim = ph.make_primitive(
            np.array(1.0), np.zeros(3), np.eye(3), np.zeros(3), np.array(1.0)
        )
        f = ph.thermo_forces(prim, GAS)
        assert np.abs(f["psi"]).max() == 0.0
        assert np.abs(f["sigma"]).max() == 0.0

    def test_zero_thermal_impulse(self):
        mat = GAS.with_updates(alpha=2.0, tau2_mode="constant", tau2=0.1)
        prim = ph.make_primitive(
            np.array(1.0), np.zeros(3), np.eye(3), np.zeros(3), np.array(1.0)
        )
        f = ph.thermo_forces(prim, mat)
        assert np.abs(f["H"]).max() == 0.0
        assert np.abs(f["q"]).max() == 0.0

    def test_psi_is_energy_gradient_fd(self):
        # central finite differences of the mesoscopic energy w.r.t. A
        rng = np.random.default_rng(3)
        A = np.eye(3) + 0.2 * rng.standard_normal((3, 3))
        J = np.zeros(3)
        prim = ph.make_primitive(np.array(1.0), np.zeros(3), A, J, np.array(1.0))
        psi = ph.thermo_forces(prim, GAS)["psi"]
        h = 1e-6
        for i in range(3):
            for k in range(3):
                Ap, Am = A.copy(), A.copy()
                Ap[i, k] += h
                Am[i, k] -= h
                fd = (ph.mesoscopic_energy(Ap, J, GAS)
                      - ph.mesoscopic_energy(Am, J, GAS)) / (2 * h)
                assert fd == pytest.approx(psi[i, k], rel=1e-6, abs=1e-9)

    def test_H_is_energy_gradient_fd(self):
        mat = GAS.with_updates(alpha=1.7, tau2_mode="constant", tau2=0.1)
        J = np.array([0.3, -0.2, 0.5])
        A = np.eye(3)
        h = 1e-4   # the energy is quadratic in J: no truncation error
        H = mat.alpha**2 * J
        for i in range(3):
            Jp, Jm = J.copy(), J.copy()
            Jp[i] += h
            Jm[i] -= h
            fd = (ph.mesoscopic_energy(A, Jp, mat)
                  - ph.mesoscopic_energy(A, Jm, mat)) / (2 * h)
            assert fd == pytest.approx(H[i], rel=1e-10, abs=1e-12)

    def test_sigma_symmetric(self):
        rng = np.random.default_rng(4)
        prim = random_states(200, rng)
        sig = ph.thermo_forces(prim, GAS)["sigma"]
        norm = np.abs(sig).reshape(len(sig), -1).max(axis=1) + 1e-300
        asym = np.abs(sig - np.swapaxes(sig, -1, -2)).reshape(len(sig), -1).max(axis=1)
        assert (asym <= 1e-12 * norm + 1e-15).all()

    def test_sigma_trace_identity(self):
        # tr(sigma) = -rho c_s^2 ||dev G||^2 exactly: zero at equilibrium,
        # quadratically small near it (the stated trace-free property holds
        # on the relaxed manifold)
        rng = np.random.default_rng(4)
        prim = random_states(200, rng)
        sig = ph.thermo_forces(prim, GAS)["sigma"]
        devG = ph.deviator(ph.metric_tensor(ph.distortion(prim)))
        expect = -prim[:, ph.RHO] * GAS.c_s**2 * np.einsum(
            "nij,nij->n", devG, devG
        )
        tr = np.einsum("nii->n", sig)
        assert np.allclose(tr, expect, rtol=1e-12, atol=1e-15)
        # exact at equilibrium
        eq = ph.make_primitive(np.array(1.0), np.zeros(3), 1.3 * np.eye(3),
                               np.zeros(3), np.array(1.0))
        sig_eq = ph.thermo_forces(eq, GAS)["sigma"]
        assert np.abs(np.trace(sig_eq)).max() == 0.0
        # near equilibrium the relative trace vanishes linearly
        for delta in (1e-3, 1e-6):
            A = np.eye(3) + delta * np.array([[0, 1, 0], [0, 0, 0], [0, 0, 0.0]])
            pn = ph.make_primitive(np.array(1.0), np.zeros(3), A, np.zeros(3),
                                   np.array(1.0))
            sn = ph.thermo_forces(pn, GAS)["sigma"]
            ratio = abs(np.trace(sn)) / (np.abs(sn).max() + 1e-300)
            assert ratio < 3.0 * delta

    def test_entropy_production_sign(self):
        rng = np.random.default_rng(5)
        prim = random_states(200, rng)
        f = ph.thermo_forces(prim, GAS)
        assert (np.einsum("nij,nij->n", f["psi"], f["psi"]) >= 0.0).all()
        assert (np.einsum("ni,ni->n", f["H"], f["H"]) >= 0.0).all()


class TestRelaxationSources:
    def test_equilibrium_zero(self):
        prim = ph.make_primitive(
            np.array(1.0), np.zeros(3), np.eye(3), np.zeros(3), np.array(1.0)
        )
        S_A, S_rhoJ = ph.relaxation_sources(prim, GAS)
        assert np.abs(S_A).max() == 0.0

    def test_infinite_tau2_exact_zero(self):
        mat = GAS.with_updates(alpha=1.0, tau2_mode="infinite")
        prim = ph.make_primitive(
            np.array(1.0), np.zeros(3), np.eye(3), np.array([1.0, 2.0, 3.0]),
            np.array(1.0),
        )
        _, S_rhoJ = ph.relaxation_sources(prim, mat)
        assert np.abs(S_rhoJ).max() == 0.0

    def test_infinite_tau1_exact_zero(self):
        mat = GAS.with_updates(tau1_mode="infinite")
        A = np.diag([1.3, 0.8, 1.0])
        prim = ph.make_primitive(np.array(1.0), np.zeros(3), A, np.zeros(3),
                                 np.array(1.0))
        S_A, _ = ph.relaxation_sources(prim, mat)
        assert np.abs(S_A).max() == 0.0

    def test_dense_matrix_oracle(self):
        # independent dense evaluation of -3 |A|^{5/3} A dev(A^T A)
        A = np.diag([1.1, 1 / 1.1, 1.0])
        S = ph.strain_source(A, np.array(1.0))
        G = A.T @ A
        dev = G - np.trace(G) / 3.0 * np.eye(3)
        expect = -3.0 * np.linalg.det(A) ** (5 / 3) * (A @ dev)
        assert np.abs(S - expect).max() < 1e-14

    def test_det_preserved_under_substepping(self):
        # monitored compatibility: explicit substeps keep det(A) drift tiny
        A = np.diag([1.1, 1 / 1.1, 1.0]) + 0.05 * np.eye(3)
        tau = 1.0
        d0 = np.linalg.det(A)
        rate = 3.0 * abs(d0) ** (5 / 3) * np.abs(
            ph.deviator(ph.metric_tensor(A))).max() / tau
        dt = 0.05 / rate
        for _ in range(200):
            A = A + dt * ph.strain_source(A, tau)
        # monitored compatibility, not a conservation assertion: the sign
        # must survive and the first-order drift stays small
        assert np.linalg.det(A) > 0.0
        assert np.linalg.det(A) == pytest.approx(d0, rel=5e-3)


class TestRelaxationTime:
    def test_from_viscosity(self):
        mat = MaterialModel(eos="ideal", rho0=1.0, c_s=1.0,
                            tau1_mode="from_viscosity", mu=1.0)
        assert mat.tau1_resolved == pytest.approx(6.0, rel=1e-14)

    def test_power_law_unit_ratio(self):
        # construct a state whose stress intensity equals sigma0 exactly
        mat = COPPER.with_updates(tau1_mode="power_law", sigma0=1.0,
                                  tau0=0.25, n_exp=10.0)
        A = np.eye(3) + np.array([[0, 1e-3, 0], [0, 0, 0], [0, 0, 0.0]])
        prim = ph.make_primitive(np.array(COPPER.rho0), np.zeros(3), A,
                                 np.zeros(3), np.array(0.0))
        sI = ph.stress_intensity(ph.shear_stress(
            ph.prim_to_cons(prim, mat), mat))
        mat2 = mat.with_updates(sigma0=float(sI))
        tau = ph.relaxation_time(prim, mat2)
        assert tau == pytest.approx(mat.tau0, rel=1e-12)

    def test_pure_shear_intensity(self):
        s = 0.37
        sig = np.zeros((3, 3))
        sig[0, 1] = sig[1, 0] = s
        assert ph.stress_intensity(sig) == pytest.approx(np.sqrt(3) * s, rel=1e-14)

    def test_stress_free_returns_sentinel(self):
        mat = COPPER.with_updates(tau1_mode="power_law", sigma0=0.004,
                                  tau0=0.1, n_exp=10.0)
        prim = ph.make_primitive(np.array(COPPER.rho0), np.zeros(3), np.eye(3),
                                 np.zeros(3), np.array(0.0))
        assert ph.relaxation_time(prim, mat) == INF_RELAXATION


class TestFluxTensor:
    def test_static_state(self):
        prim = ph.make_primitive(np.array(1.0), np.zeros(3), np.eye(3),
                                 np.zeros(3), np.array(0.7))
        q = ph.prim_to_cons(prim, GAS)
        F = ph.flux_tensor(q, GAS)
        assert np.abs(F[..., ph.RHO, :]).max() == 0.0
        assert np.allclose(F[..., 1:4, :], 0.7 * np.eye(3), atol=1e-14)
        assert np.abs(F[..., ph.EN, :]).max() < 1e-14

    def test_1d_euler_oracle(self):
        # column 0 equals the classical Euler flux extended by A and J rows
        rng = np.random.default_rng(6)
        prim = random_states(50, rng)
        q = ph.prim_to_cons(prim, GAS)
        F = ph.flux_tensor(q, GAS)
        rho, u = prim[:, 0], prim[:, 1]
        p = prim[:, ph.EN]
        sig = ph.shear_stress(q, GAS)
        assert np.allclose(F[:, 0, 0], rho * u, rtol=1e-13)
        assert np.allclose(
            F[:, 1, 0], rho * u * u + p - sig[:, 0, 0], rtol=1e-12, atol=1e-13
        )
        assert np.allclose(
            F[:, ph.EN, 0],
            u * (q[:, ph.EN] + p) - (sig[:, 0] * prim[:, 1:4]).sum(axis=1),
            rtol=1e-12, atol=1e-13,
        )
        # distortion rows: flux of A_ik only in direction k with value (Av)_i
        Av = np.einsum("nij,nj->ni", ph.distortion(q), prim[:, 1:4])
        for i in range(3):
            for k in range(3):
                col = F[:, 4 + 3 * i + k, :]
                assert np.allclose(col[:, k], Av[:, i], rtol=1e-13)
                other = [m for m in range(3) if m != k]
                assert np.abs(col[:, other]).max() == 0.0

    def test_free_stream_mass_flux(self):
        prim = ph.make_primitive(np.array(1.0), np.array([1.0, 0, 0]),
                                 np.eye(3), np.zeros(3), np.array(1 / 1.4))
        q = ph.prim_to_cons(prim, GAS)
        F = ph.flux_tensor(q, GAS)
        assert F[..., ph.RHO, 0] == pytest.approx(1.0, rel=1e-14)


class TestNonconservativeProduct:
    def test_zero_velocity(self):
        rng = np.random.default_rng(7)
        prim = random_states(10, rng, scale=0.0)
        prim[:, 1:4] = 0.0
        q = ph.prim_to_cons(prim, GAS)
        grad = rng.standard_normal((10, 17, 3))
        assert np.abs(ph.nonconservative_product(q, grad)).max() == 0.0

    def test_curl_free_gradient(self):
        rng = np.random.default_rng(8)
        prim = random_states(10, rng)
        q = ph.prim_to_cons(prim, GAS)
        grad = np.zeros((10, 17, 3))
        # dA_ik/dx_j = C_i delta(everything symmetric in j<->k): use
        # dA_ik/dx_j = c[i] for all k, j  =>  dA_ik/dx_j - dA_ij/dx_k = 0
        c = rng.standard_normal((10, 3))
        for i in range(3):
            for k in range(3):
                grad[:, 4 + 3 * i + k, :] = c[:, i, None]
        P = ph.nonconservative_product(q, grad)
        assert np.abs(P).max() < 1e-14

    def test_index_notation_oracle(self):
        rng = np.random.default_rng(9)
        prim = random_states(20, rng)
        q = ph.prim_to_cons(prim, GAS)
        grad = rng.standard_normal((20, 17, 3))
        P = ph.nonconservative_product(q, grad)
        v = prim[:, 1:4]
        expect = np.zeros_like(P)
        for n in range(20):
            for i in range(3):
                for k in range(3):
                    acc = 0.0
                    for j in range(3):
                        acc += v[n, j] * (
                            grad[n, 4 + 3 * i + k, j] - grad[n, 4 + 3 * i + j, k]
                        )
                    expect[n, 4 + 3 * i + k] = acc
        assert np.abs(P - expect).max() < 1e-14
        assert np.abs(P[:, :4]).max() == 0.0
        assert np.abs(P[:, 13:]).max() == 0.0


class TestSignalSpeed:
    def test_unit_sound_speed(self):
        mat = GAS.with_updates(c_s=0.0)
        prim = ph.make_primitive(np.array(1.0), np.zeros(3), np.eye(3),
                                 np.zeros(3), np.array(1 / 1.4))
        q = ph.prim_to_cons(prim, mat)
        lam = ph.max_signal_speed(q, mat, np.array([1.0, 0.0]))
        assert lam == pytest.approx(1.0, rel=1e-14)

    def test_shear_contribution(self):
        prim = ph.make_primitive(np.array(1.0), np.zeros(3), np.eye(3),
                                 np.zeros(3), np.array(1 / 1.4))
        q = ph.prim_to_cons(prim, GAS)
        lam = ph.max_signal_speed(q, GAS, np.array([1.0, 0.0]))
        assert lam == pytest.approx(np.sqrt(1 + 1.0 / 3.0), rel=1e-14)

    def test_comoving_frame(self):
        prim = ph.make_primitive(np.array(1.0), np.array([2.0, 0, 0]),
                                 np.eye(3), np.zeros(3), np.array(1 / 1.4))
        q = ph.prim_to_cons(prim, GAS)
        lam = ph.max_signal_speed(q, GAS, np.array([1.0, 0.0]),
                                  V=np.array([2.0, 0.0]))
        c = ph.sound_speed(q, GAS)
        assert lam == pytest.approx(float(c), rel=1e-14)

    def test_mg_reference_sound_speed(self):
        # f'(1) = 1: the acoustic part reduces to c0 at the reference state
        prim = ph.make_primitive(np.array(COPPER.rho0), np.zeros(3), np.eye(3),
                                 np.zeros(3), np.array(0.0))
        q = ph.prim_to_cons(prim, COPPER)
        c = ph.sound_speed(q, COPPER)
        assert c == pytest.approx(
            np.sqrt(COPPER.c0**2 + 4 / 3 * COPPER.c_s**2), rel=1e-12
        )
