"""Global node-velocity assignment, rezoning and the timestep criteria.

Node velocities come from an area-weighted average of the adjacent cells'
reconstructed velocities at the node (the simple corner-average nodal
solver); mesh quality is kept by blending the Lagrangian positions with an
area-weighted centroid smoothing, scanning the blend factor from zero until
every triangle stays positively oriented.
"""

from __future__ import annotations

import numpy as np

from . import physics as ph
from .mesh import MeshError, MovingMesh, triangle_area


class TangledMeshError(MeshError):
    def __init__(self, message, cells=None):
        super().__init__(message)
        self.cells = cells


def nodal_velocity(mesh: MovingMesh, recon, coeffs, mode, velocity_field=None, t=0.0):
    """Per-node mesh velocity (n_nodes, 2)."""
    n_nodes = len(mesh.nodes)
    if mode == "eulerian":
        return np.zeros((n_nodes, 2))
    if mode == "prescribed":
        return np.asarray(velocity_field(mesh.nodes, np.full(n_nodes, t)), dtype=float)
    if mode != "lagrangian":
        raise ValueError(f"unknown mesh motion mode {mode!r}")
    # evaluate each cell's reconstruction at its three corners
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    vals = recon.basis.eval(corners)                     # (3, nl)
    qc = np.einsum("kl,clv->ckv", vals, coeffs)          # (cells, 3 corners, 17)
    vel = qc[..., 1:3] / qc[..., :1]
    w = mesh.areas()
    vsum = np.zeros((n_nodes, 2))
    wsum = np.zeros(n_nodes)
    ids = mesh.cells.ravel()
    np.add.at(vsum, ids, (w[:, None, None] * vel).reshape(-1, 2))
    np.add.at(wsum, ids, np.repeat(w, 3))
    return vsum / wsum[:, None]


def smoothed_positions(mesh: MovingMesh, nodes):
    """Area-weighted average of surrounding cell centroids, per node, seen in
    each node's own coordinate frame."""
    v = mesh.vertices(nodes)
    cent = v.mean(axis=1)
    area = triangle_area(v)
    n_nodes = len(nodes)
    psum = np.zeros((n_nodes, 2))
    wsum = np.zeros(n_nodes)
    ids = mesh.cells.ravel()
    # centroid of cell c in the frame of its k-th vertex: cent - shift[c, k]
    local = cent[:, None, :] - mesh.shifts
    np.add.at(psum, ids, (area[:, None, None] * local).reshape(-1, 2))
    np.add.at(wsum, ids, np.repeat(area, 3))
    return psum / wsum[:, None]


def rezone_relax(mesh: MovingMesh, lagrangian_nodes, constraints=None,
                 omega_policy="auto", t_new=None):
    """Blend Lagrangian positions with smoothed ones: the smallest blend
    factor in {0, 0.1, ..., 1} giving all-positive areas wins.  Boundary
    constraints are re-applied after blending; raises TangledMeshError when
    no factor works."""
    lag = np.asarray(lagrangian_nodes, dtype=float)
    if constraints is not None:
        lag = constraints.apply(lag, t_new)
    if omega_policy == "auto":
        omegas = np.linspace(0.0, 1.0, 11)
    elif omega_policy.startswith("fixed:"):
        omegas = [float(omega_policy.split(":", 1)[1])]
    else:
        raise ValueError(f"unknown omega policy {omega_policy!r}")
    smooth = None
    chosen = None
    for om in omegas:
        if om == 0.0:
            cand = lag
        else:
            if smooth is None:
                smooth = smoothed_positions(mesh, lag)
                if constraints is not None:
                    free = constraints.free_mask(len(lag))
                    smooth = np.where(free[:, None], smooth, lag)
            cand = (1.0 - om) * lag + om * smooth
            if constraints is not None:
                cand = constraints.apply(cand, t_new)
        areas = mesh.areas(cand)
        if np.all(areas > 0.0):
            chosen = (om, cand)
            break
    if chosen is None:
        bad = np.where(mesh.areas(lag) <= 0.0)[0]
        raise TangledMeshError(
            f"mesh tangled: no relaxation factor untangles cells {bad[:20]}",
            cells=bad,
        )
    return chosen[1], chosen[0]


def compute_timestep(mesh: MovingMesh, Q, mat, cfl, node_velocity,
                     max_volume_ratio=1.2, dt_cap=np.inf, t_floor=0.0):
    """CFL bound over cells, then halved until no tentative cell volume
    changes by more than the allowed factor."""
    d = mesh.insphere_diameters()
    v = ph.velocity(Q)
    lam = np.sqrt((v[:, :2] ** 2).sum(axis=1)) + ph.sound_speed(Q, mat)
    dt = cfl * float((d / lam).min())
    dt = min(dt, dt_cap)
    if dt <= 0.0 or not np.isfinite(dt):
        raise MeshError("non-positive CFL timestep")
    a0 = mesh.areas()
    for _ in range(60):
        cand = mesh.nodes + dt * node_velocity
        a1 = mesh.areas(cand)
        if np.all(a1 > 0.0):
            ratio = max((a1 / a0).max(), (a0 / a1).max())
            if ratio <= max_volume_ratio:
                break
        dt *= 0.5
    if dt < t_floor:
        raise MeshError(f"timestep underflow: dt={dt:.3e}")
    return dt


class BoundaryNodeConstraints:
    """Per-node motion constraints derived from boundary tags.

    Wall nodes slide along their initial boundary line; moving-boundary
    nodes follow the translating line; corner nodes joining two constrained
    lines are pinned to the intersection.  Free-traction and transmissive
    nodes move fully Lagrangian.
    """

    def __init__(self):
        self.lines = {}    # node -> list of (p0, dir, vel_fn or None)

    @classmethod
    def from_mesh(cls, mesh: MovingMesh, moving_velocity=None):
        out = cls()
        v = mesh.vertices()
        for c, k in mesh.faces_bnd:
            tag = mesh.boundary_tag.get((int(c), int(k)), "transmissive")
            if tag not in ("wall", "moving"):
                continue
            a = v[c, k]
            b = v[c, (k + 1) % 3]
            d = b - a
            d = d / np.linalg.norm(d)
            vel = moving_velocity if tag == "moving" else None
            for nid, pos in ((mesh.cells[c, k], a), (mesh.cells[c, (k + 1) % 3], b)):
                sh_idx = np.where(mesh.cells[c] == nid)[0][0]
                p0 = pos - mesh.shifts[c, sh_idx]
                out._add_line(int(nid), p0, d, vel)
        return out

    def _add_line(self, nid, p0, d, vel):
        for q0, e, _v in self.lines.get(nid, []):
            if abs(d[0] * e[1] - d[1] * e[0]) < 1e-12:
                return  # same line already registered
        self.lines.setdefault(nid, []).append((p0, d, vel))

    def free_mask(self, n_nodes):
        m = np.ones(n_nodes, dtype=bool)
        for nid in self.lines:
            m[nid] = False
        return m

    def apply(self, nodes, t_new=None):
        out = nodes.copy()
        for nid, lines in self.lines.items():
            offs = []
            for p0, d, vel in lines:
                off = np.zeros(2)
                if vel is not None and t_new is not None:
                    off = np.asarray(vel.displacement(t_new), dtype=float)
                offs.append((p0 + off, d))
            if len(offs) == 1:
                p0, d = offs[0]
                out[nid] = p0 + np.dot(out[nid] - p0, d) * d
            else:
                # intersection of the first two independent lines
                (p1, d1), (p2, d2) = offs[0], offs[1]
                A = np.array([[d1[0], -d2[0]], [d1[1], -d2[1]]])
                s = np.linalg.solve(A, p2 - p1)
                out[nid] = p1 + s[0] * d1
        return out
