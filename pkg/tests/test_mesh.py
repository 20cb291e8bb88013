"""Triangulation, stencils, reference maps and space-time face geometry."""

import numpy as np
import pytest

from hprale import mesh as mm


class TestGeometry:
    def test_reference_map_identity(self):
        m = mm.MovingMesh(np.array([[0.0, 0], [1, 0], [0, 1]]), [[0, 1, 2]])
        v0, J, Jinv = m.jacobians()
        assert np.allclose(J[0], np.eye(2), atol=1e-15)
        assert np.allclose(v0[0], 0.0, atol=1e-15)

    def test_reference_map_translation(self):
        m = mm.MovingMesh(np.array([[2.0, 3], [3, 3], [2, 4]]), [[0, 1, 2]])
        v0, J, Jinv = m.jacobians()
        assert np.allclose(J[0], np.eye(2), atol=1e-15)
        assert np.allclose(v0[0], [2, 3], atol=1e-15)

    def test_reference_map_round_trip(self):
        rng = np.random.default_rng(0)
        nodes = np.array([[0.1, 0.2], [1.3, 0.4], [0.5, 1.7]]) \
            + 0.2 * rng.standard_normal((3, 2))
        m = mm.MovingMesh(nodes, [[0, 1, 2]])
        x = rng.random((50, 2))
        ref = m.to_reference(np.zeros(50, dtype=int), x)
        v0, J, _ = m.jacobians()
        back = v0[0] + ref @ J[0].T
        assert np.abs(back - x).max() < 1e-13

    def test_jacobian_is_twice_area(self):
        rng = np.random.default_rng(1)
        nodes = rng.random((3, 2)) * 2
        m = mm.MovingMesh(nodes, [[0, 1, 2]])
        _, J, _ = m.jacobians()
        assert np.linalg.det(J[0]) == pytest.approx(2 * m.areas()[0], rel=1e-13)

    def test_orientation_repair(self):
        # clockwise triangle gets its nodes swapped
        m = mm.MovingMesh(np.array([[0.0, 0], [0, 1], [1, 0]]), [[0, 1, 2]])
        assert m.areas()[0] > 0


class TestInsphere:
    def test_equilateral(self):
        v = np.array([[[0, 0], [1, 0], [0.5, np.sqrt(3) / 2]]])
        assert mm.insphere_diameter(v)[0] == pytest.approx(1 / np.sqrt(3), rel=1e-13)

    def test_right_triangle(self):
        v = np.array([[[0, 0], [3, 0], [0, 4.0]]])
        assert mm.insphere_diameter(v)[0] == pytest.approx(2.0, rel=1e-14)

    def test_scaling(self):
        rng = np.random.default_rng(2)
        v = rng.random((1, 3, 2))
        d1 = mm.insphere_diameter(v)
        d2 = mm.insphere_diameter(3.7 * v)
        assert d2[0] == pytest.approx(3.7 * d1[0], rel=1e-13)

    def test_degenerate_raises(self):
        v = np.array([[[0, 0], [1, 0], [2, 0.0]]])
        with pytest.raises(mm.MeshError):
            mm.insphere_diameter(v)


class TestStencils:
    def test_counts_degree1(self):
        m = mm.rectangle_mesh(8, 8, periodic_x=True, periodic_y=True)
        st = m.build_stencils(1)
        assert st.n_e == 6                      # 2 * 3 dofs
        assert st.cells.shape == (m.n_cells, 7, 6)
        assert (st.cells[:, :, 0] == np.arange(m.n_cells)[:, None]).all()

    def test_counts_degree2(self):
        m = mm.rectangle_mesh(10, 10)
        st = m.build_stencils(2)
        assert st.n_e == 12                     # 2 * 6 dofs

    def test_no_duplicates(self):
        m = mm.rectangle_mesh(8, 8, periodic_x=True, periodic_y=True)
        st = m.build_stencils(2)
        for c in range(0, m.n_cells, 17):
            for s in range(7):
                assert len(set(st.cells[c, s])) == st.n_e

    def test_small_strip_raises(self):
        m = mm.rectangle_mesh(3, 1)
        with pytest.raises(mm.MeshError):
            m.build_stencils(3)


class TestSpacetimeFaces:
    def test_static_face_normal(self):
        a, b = np.array([0.0, 0.0]), np.array([1.0, 0.0])
        pts, w, nrm, tau = mm.spacetime_face_quadrature(a, b, a, b, 0.5, 3)
        # edge along +x of a counterclockwise cell: outward normal is -y
        assert np.allclose(nrm, [0, -1, 0, 0], atol=1e-14)
        assert w.sum() == pytest.approx(0.5, rel=1e-13)   # length * dt

    def test_rigid_translation_consistency(self):
        # a face translating with velocity V satisfies n~ . (V, 1) = 0
        rng = np.random.default_rng(3)
        a, b = rng.random(2), rng.random(2) + [1, 0]
        V = np.array([0.3, -0.2])
        dt = 0.25
        pts, w, nrm, tau = mm.spacetime_face_quadrature(
            a, b, a + dt * V, b + dt * V, dt, 4
        )
        # a point moving with the face has space-time direction (V, 1),
        # which lies in the surface: n~ . (V, 1) = 0
        raw = nrm[..., :2] @ V + nrm[..., 3]
        assert np.abs(raw).max() < 1e-13

    def test_determinant_oracle(self):
        # cross-check against the explicit 3x3 determinant expansion of the
        # space-time surface element
        rng = np.random.default_rng(4)
        a0, b0 = rng.random(2), rng.random(2) + [1, 0]
        a1, b1 = a0 + 0.1 * rng.standard_normal(2), b0 + 0.1 * rng.standard_normal(2)
        dt = 0.3
        n1d = 3
        pts, w, nrm, tau = mm.spacetime_face_quadrature(a0, b0, a1, b1, dt, n1d)
        g, gw = np.polynomial.legendre.leggauss(n1d)
        g = 0.5 * (g + 1)
        gw = 0.5 * gw
        k = 0
        for i in range(n1d):
            for j in range(n1d):
                chi, t = g[i], g[j]
                e_chi = np.append((1 - t) * (b0 - a0) + t * (b1 - a1), 0.0)
                e_tau = np.append((a1 - a0) + chi * ((b1 - b0) - (a1 - a0)), dt)
                cr = np.array([
                    e_chi[1] * e_tau[2] - e_chi[2] * e_tau[1],
                    e_chi[2] * e_tau[0] - e_chi[0] * e_tau[2],
                    e_chi[0] * e_tau[1] - e_chi[1] * e_tau[0],
                ])
                measure = np.linalg.norm(cr)
                assert w[k] == pytest.approx(gw[i] * gw[j] * measure, rel=1e-12)
                unit = cr / measure
                assert np.allclose(nrm[k, [0, 1, 3]], unit, atol=1e-12)
                k += 1

    def test_tangled_face_raises(self):
        a, b = np.array([0.0, 0.0]), np.array([1.0, 0.0])
        with pytest.raises(mm.MeshError):
            # endpoints swap: the lateral surface degenerates mid-step
            mm.spacetime_face_quadrature(a, b, b, a, 0.1, 3)


class TestClosedSurface:
    def test_static(self):
        v = np.array([[0.0, 0], [1, 0], [0.2, 0.8]])
        r = mm.closed_surface_normal_sum(v, v, 0.4)
        assert np.abs(r).max() < 1e-14

    def test_rigid_translation(self):
        v = np.array([[0.0, 0], [1, 0], [0.2, 0.8]])
        r = mm.closed_surface_normal_sum(v, v + [0.3, 0.1], 0.4)
        assert np.abs(r).max() < 1e-13

    def test_random_motion(self):
        rng = np.random.default_rng(5)
        v0 = np.array([[0.0, 0], [1, 0], [0.2, 0.8]]) \
            + 0.05 * rng.standard_normal((200, 3, 2))
        v1 = v0 + 0.1 * rng.standard_normal((200, 3, 2))
        r = mm.closed_surface_normal_sum(v0, v1, 0.4)
        scale = np.abs(v0).max()
        assert np.abs(r).max() < 1e-12 * scale


class TestMeshFiles:
    def test_round_trip(self, tmp_path):
        m = mm.rectangle_mesh(4, 3)
        m.set_boundary_tags({fk: "wall" for fk in m.side_of_face})
        path = tmp_path / "mesh.txt"
        mm.write_mesh(path, m)
        m2 = mm.read_mesh(path)
        assert m2.n_cells == m.n_cells
        assert np.allclose(m2.nodes, m.nodes)
        assert m2.domain_area() == pytest.approx(m.domain_area(), rel=1e-14)
        assert set(m2.boundary_tag.values()) == {"wall"}

    def test_periodic_tags_fold_into_connectivity(self, tmp_path):
        m = mm.rectangle_mesh(6, 5)
        tags = {}
        for fk, side in m.side_of_face.items():
            tags[fk] = {
                "left": "periodic_x", "right": "periodic_x",
                "bottom": "wall", "top": "wall",
            }[side]
        m.set_boundary_tags(tags)
        path = tmp_path / "mesh.txt"
        mm.write_mesh(path, m)
        m2 = mm.read_mesh(path)
        # periodic faces are interior now
        tags2 = set(m2.boundary_tag.values())
        assert "periodic_x" not in tags2
        assert len(m2.faces_bnd) < len(m.faces_bnd)
        assert m2.domain_area() == pytest.approx(m.domain_area(), rel=1e-12)

    def test_bad_header_raises(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("POINTS 3 TRIANGLES 1\n")
        with pytest.raises(mm.MeshError):
            mm.read_mesh(path)


class TestDomainArea:
    def test_rectangle_shoelace(self):
        m = mm.rectangle_mesh(7, 5, 0, 0, 2.0, 1.4)
        assert m.domain_area() == pytest.approx(2.8, rel=1e-10)

    def test_face_normal_antisymmetry(self):
        rng = np.random.default_rng(6)
        m = mm.rectangle_mesh(5, 5, periodic_x=True, periodic_y=True)
        m.nodes_new = m.nodes + 0.02 * rng.standard_normal(m.nodes.shape)
        vo = m.vertices(m.nodes)
        vn = m.vertices(m.nodes_new)
        dt = 0.2
        for c, k, j, kj in m.faces_int[:20]:
            pts_i, w_i, n_i, _ = mm.spacetime_face_quadrature(
                vo[c, k], vo[c, (k + 1) % 3], vn[c, k], vn[c, (k + 1) % 3], dt, 3
            )
            pts_j, w_j, n_j, _ = mm.spacetime_face_quadrature(
                vo[j, kj], vo[j, (kj + 1) % 3], vn[j, kj], vn[j, (kj + 1) % 3],
                dt, 3,
            )
            # same sub-volume seen from the two sides: weights match and the
            # unit normals are exact negatives at matched points (the j-side
            # traverses the face with chi reversed)
            assert w_i.sum() == pytest.approx(w_j.sum(), rel=1e-12)
            assert np.abs(np.sort(w_i) - np.sort(w_j)).max() < 1e-13
            ni_sum = (w_i[:, None] * n_i).sum(axis=0)
            nj_sum = (w_j[:, None] * n_j).sum(axis=0)
            assert np.abs(ni_sum + nj_sum).max() < 1e-13
