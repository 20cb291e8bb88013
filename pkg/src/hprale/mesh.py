"""Moving unstructured triangulations and their space-time geometry.

Periodic boundaries are handled in the connectivity itself: the mesh lives
on a torus, cells store a per-vertex coordinate shift that unwraps them into
a coherent frame, and periodic faces are ordinary interior faces.  Node
coordinates are kept for both time levels of the current step so every
lateral space-time sub-volume (a bilinear quadrilateral in (x, y, t)) can be
quadratured with its outward unit space-time normal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import gauss_legendre_01, triangle_quadrature

BOUNDARY_TAGS = (
    "transmissive",
    "wall",
    "free_traction",
    "moving",
    "periodic_x",
    "periodic_y",
)


class MeshError(ValueError):
    pass


def triangle_area(v):
    """Signed area; v has shape (..., 3, 2)."""
    d1 = v[..., 1, :] - v[..., 0, :]
    d2 = v[..., 2, :] - v[..., 0, :]
    return 0.5 * (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])


def insphere_diameter(v):
    """Incircle diameter 4*area/perimeter of triangles (..., 3, 2)."""
    area = triangle_area(v)
    per = sum(
        np.linalg.norm(v[..., (k + 1) % 3, :] - v[..., k, :], axis=-1) for k in range(3)
    )
    if np.any(area <= 0.0):
        raise MeshError("degenerate or inverted triangle")
    return 4.0 * area / per


@dataclass
class StencilSet:
    """Fixed-topology reconstruction stencils: cell ids and unwrapping shifts
    for the central and the six one-sided stencils of every cell."""

    M: int
    n_e: int
    cells: np.ndarray    # (N, 7, n_e) member ids, member 0 is the cell itself
    shifts: np.ndarray   # (N, 7, n_e, 2) coordinate shifts into the central frame


class MovingMesh:
    """Triangulation with node coordinates at both time levels.

    ``nodes`` are representative coordinates (the mesh may be periodic);
    geometric queries go through :meth:`vertices`, which applies the
    per-cell unwrapping shifts.
    """

    def __init__(self, nodes, cells, shifts=None, period=None):
        self.nodes = np.asarray(nodes, dtype=float).copy()
        self.cells = np.asarray(cells, dtype=np.int64).copy()
        n_cells = len(self.cells)
        if shifts is None:
            shifts = np.zeros((n_cells, 3, 2))
        self.shifts = np.asarray(shifts, dtype=float).copy()
        self.period = period
        self.nodes_new = self.nodes.copy()
        self._fix_orientation()
        self._build_connectivity()
        self.boundary_tag = {}           # (cell, face) -> tag string
        self.moving_tags = {}            # tag -> velocity callable
        self._stencils = {}
        self._geometry_epoch = 0

    # -- construction ------------------------------------------------------

    def _fix_orientation(self):
        flip = triangle_area(self.vertices()) < 0.0
        if np.any(flip):
            c1 = self.cells[flip, 1].copy()
            self.cells[flip, 1] = self.cells[flip, 2]
            self.cells[flip, 2] = c1
            s1 = self.shifts[flip, 1].copy()
            self.shifts[flip, 1] = self.shifts[flip, 2]
            self.shifts[flip, 2] = s1
        if np.any(triangle_area(self.vertices()) <= 0.0):
            raise MeshError("zero-area triangle in input")

    def _build_connectivity(self):
        n = len(self.cells)
        self.neighbors = np.full((n, 3), -1, dtype=np.int64)
        self.neighbor_face = np.full((n, 3), -1, dtype=np.int64)
        edge_map = {}
        for c in range(n):
            for k in range(3):
                a, b = self.cells[c, k], self.cells[c, (k + 1) % 3]
                key = (min(a, b), max(a, b))
                if key in edge_map:
                    c2, k2 = edge_map.pop(key)
                    self.neighbors[c, k] = c2
                    self.neighbors[c2, k2] = c
                    self.neighbor_face[c, k] = k2
                    self.neighbor_face[c2, k2] = k
                else:
                    edge_map[(min(a, b), max(a, b))] = (c, k)
        counts = {}
        for c in range(n):
            for k in range(3):
                a, b = self.cells[c, k], self.cells[c, (k + 1) % 3]
                counts[(min(a, b), max(a, b))] = counts.get((min(a, b), max(a, b)), 0) + 1
        if any(v > 2 for v in counts.values()):
            raise MeshError("an edge is shared by more than two cells")
        # interior face list (each once) and the frame shift of the neighbor
        fi, fb = [], []
        for c in range(n):
            for k in range(3):
                j = self.neighbors[c, k]
                if j < 0:
                    fb.append((c, k))
                elif (j, self.neighbor_face[c, k]) > (c, k):
                    fi.append((c, k, j, self.neighbor_face[c, k]))
        self.faces_int = np.asarray(fi, dtype=np.int64).reshape(-1, 4)
        self.faces_bnd = np.asarray(fb, dtype=np.int64).reshape(-1, 2)
        # shift taking neighbor-frame coordinates to the i-frame: a point x in
        # i's frame corresponds to x - delta in j's frame
        delta = np.zeros((len(self.faces_int), 2))
        for m, (c, k, j, kj) in enumerate(self.faces_int):
            a = self.cells[c, k]
            loc = np.where(self.cells[j] == a)[0][0]
            delta[m] = self.shifts[c, k] - self.shifts[j, loc]
        self.face_delta = delta

    # -- geometry ----------------------------------------------------------

    @property
    def n_cells(self):
        return len(self.cells)

    def vertices(self, nodes=None):
        nodes = self.nodes if nodes is None else nodes
        return nodes[self.cells] + self.shifts

    def areas(self, nodes=None):
        return triangle_area(self.vertices(nodes))

    def centroids(self, nodes=None):
        return self.vertices(nodes).mean(axis=1)

    def insphere_diameters(self, nodes=None):
        return insphere_diameter(self.vertices(nodes))

    def jacobians(self, nodes=None):
        """Affine reference maps: x = v0 + J @ (xi, eta).  Returns (v0, J,
        Jinv) with shapes (N, 2), (N, 2, 2), (N, 2, 2)."""
        v = self.vertices(nodes)
        J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.any(det <= 0.0):
            raise MeshError("inverted cell in reference map")
        Jinv = np.empty_like(J)
        Jinv[:, 0, 0] = J[:, 1, 1] / det
        Jinv[:, 0, 1] = -J[:, 0, 1] / det
        Jinv[:, 1, 0] = -J[:, 1, 0] / det
        Jinv[:, 1, 1] = J[:, 0, 0] / det
        return v[:, 0], J, Jinv

    def to_reference(self, cell_ids, x, nodes=None):
        """Physical points (..., 2) to reference coordinates of given cells."""
        v0, _, Jinv = self.jacobians(nodes)
        d = x - v0[cell_ids]
        return np.einsum("...ij,...j->...i", Jinv[cell_ids], d)

    def commit_motion(self):
        """Adopt nodes_new as the current configuration."""
        if np.array_equal(self.nodes, self.nodes_new):
            return
        self.nodes = self.nodes_new.copy()
        self._geometry_epoch += 1

    def domain_area(self, nodes=None):
        return float(self.areas(nodes).sum())

    # -- boundary ----------------------------------------------------------

    def set_boundary_tags(self, mapping):
        """mapping: {(cell, face): tag}.  Faces not mentioned default to
        transmissive."""
        for (c, k), tag in mapping.items():
            if tag not in BOUNDARY_TAGS:
                raise MeshError(f"unknown boundary tag {tag!r}")
            self.boundary_tag[(int(c), int(k))] = tag
        for c, k in self.faces_bnd:
            self.boundary_tag.setdefault((int(c), int(k)), "transmissive")

    def boundary_faces_by_tag(self):
        out = {}
        for c, k in self.faces_bnd:
            tag = self.boundary_tag.get((int(c), int(k)), "transmissive")
            out.setdefault(tag, []).append((int(c), int(k)))
        return out

    # -- stencils ----------------------------------------------------------

    def build_stencils(self, M):
        """Central plus three forward and three reverse sector stencils per
        cell, each with n_e = 2*(M+1)(M+2)/2 members gathered by
        neighbor-of-neighbor expansion (membership is fixed at build time;
        the least-squares systems themselves are rebuilt on every geometry
        change)."""
        if M in self._stencils:
            return self._stencils[M]
        if M not in (1, 2, 3):
            raise MeshError("reconstruction degree must be 1, 2 or 3")
        n_dof = (M + 1) * (M + 2) // 2
        n_e = 2 * n_dof
        N = self.n_cells
        if N < n_e:
            raise MeshError(
                f"mesh has {N} cells; degree {M} stencils need {n_e}"
            )
        cent = self.centroids()
        verts = self.vertices()
        adj = self.neighbors
        nshift = np.zeros((N, 3, 2))
        for m, (c, k, j, kj) in enumerate(self.faces_int):
            nshift[c, k] = self.face_delta[m]
            nshift[j, kj] = -self.face_delta[m]

        def bfs(start, accept, need):
            # returns list of (cell, shift) in discovery order, cell included
            seen = {start}
            out = [(start, np.zeros(2))]
            frontier = [(start, np.zeros(2))]
            while len(out) < need and frontier:
                nxt = []
                for c, sh in frontier:
                    for k in range(3):
                        j = adj[c, k]
                        if j < 0 or j in seen:
                            continue
                        seen.add(j)
                        sj = sh + nshift[c, k]
                        if accept(j, sj):
                            out.append((j, sj))
                            nxt.append((j, sj))
                            if len(out) >= need:
                                return out
                frontier = nxt
            return out

        cells_arr = np.zeros((N, 7, n_e), dtype=np.int64)
        shifts_arr = np.zeros((N, 7, n_e, 2))
        for i in range(N):
            b = cent[i]
            full = bfs(i, lambda j, s: True, 4 * n_e)
            if len(full) < n_e:
                raise MeshError(
                    f"cell {i}: only {len(full)} cells reachable, "
                    f"need {n_e} for degree {M}"
                )
            # central stencil: first n_e in BFS order
            sel = full[:n_e]
            cells_arr[i, 0] = [c for c, _ in sel]
            shifts_arr[i, 0] = [s for _, s in sel]
            by_id = {c: s for c, s in full}
            order = [c for c, _ in full]
            for f in range(3):
                r1 = verts[i, f] - b
                r2 = verts[i, (f + 1) % 3] - b
                Minv = np.linalg.inv(np.stack([r1, r2], axis=-1))
                for rev in (0, 1):
                    members = [(i, np.zeros(2))]
                    sign = -1.0 if rev else 1.0
                    for tol in (0.05, 0.3, 1.0):
                        members = [(i, np.zeros(2))]
                        for c in order:
                            if c == i:
                                continue
                            s = by_id[c]
                            ab = Minv @ (cent[c] + s - b)
                            if sign * ab[0] >= -tol * np.abs(ab).sum() and (
                                sign * ab[1] >= -tol * np.abs(ab).sum()
                            ):
                                members.append((c, s))
                            if len(members) >= n_e:
                                break
                        if len(members) >= n_e:
                            break
                    if len(members) < n_e:
                        # starved sector: fill with nearest cells by BFS order
                        have = {c for c, _ in members}
                        for c in order:
                            if c not in have:
                                members.append((c, by_id[c]))
                                have.add(c)
                            if len(members) >= n_e:
                                break
                    slot = 1 + f + 3 * rev
                    cells_arr[i, slot] = [c for c, _ in members[:n_e]]
                    shifts_arr[i, slot] = [s for _, s in members[:n_e]]
        st = StencilSet(M=M, n_e=n_e, cells=cells_arr, shifts=shifts_arr)
        self._stencils[M] = st
        return st


# ---------------------------------------------------------------------------
# space-time face geometry


def spacetime_face_quadrature(xa0, xb0, xa1, xb1, dt, n_pts):
    """Quadrature of the lateral space-time sub-volume spanned by a face with
    endpoints (xa, xb) moving linearly from time level n to n+1.

    Returns ``(points, weights, normals, tau)`` where points are physical
    (..., nq, 3) tuples (x, y, t-t^n), weights carry the surface measure, and
    normals are outward unit space-time vectors (..., nq, 4) with zero z
    component.  Orientation follows the (a -> b) edge direction: for a
    counterclockwise cell the right-hand perpendicular points outward.
    """
    xa0, xb0 = np.asarray(xa0, float), np.asarray(xb0, float)
    xa1, xb1 = np.asarray(xa1, float), np.asarray(xb1, float)
    g, gw = gauss_legendre_01(n_pts)
    chi = np.repeat(g, n_pts)
    tau = np.tile(g, n_pts)
    w2 = (np.repeat(gw, n_pts) * np.tile(gw, n_pts))

    def lerp(a, b, t):
        return a[..., None, :] * (1.0 - t)[:, None] + b[..., None, :] * t[:, None]

    e0 = xb0 - xa0
    e1 = xb1 - xa1
    echi = lerp(e0, e1, tau)                      # (..., nq, 2)
    a_t = xa1 - xa0
    b_t = xb1 - xb0
    stau = lerp(a_t, b_t, chi)                    # (..., nq, 2)
    cx = echi[..., 1] * dt
    cy = -echi[..., 0] * dt
    ct = echi[..., 0] * stau[..., 1] - echi[..., 1] * stau[..., 0]
    norm = np.sqrt(cx**2 + cy**2 + ct**2)
    if np.any(norm <= 0.0):
        raise MeshError("tangled space-time face (vanishing measure)")
    nrm = np.stack([cx / norm, cy / norm, np.zeros_like(cx), ct / norm], axis=-1)
    pa = lerp(xa0, xa1, tau)
    pab = pa + chi[:, None] * (lerp(xb0, xb1, tau) - pa)
    pts = np.concatenate([pab, (tau * dt)[..., None] * np.ones_like(pab[..., :1])], axis=-1)
    return pts, w2 * norm, nrm, tau


def closed_surface_normal_sum(verts_old, verts_new, dt, n_pts=3):
    """Integral of the outward space-time normal over the closed boundary of
    one moving cell: three lateral faces plus the two time caps.  Returns the
    3-vector (x, y, t) residual, which Gauss' theorem makes zero."""
    verts_old = np.asarray(verts_old, float)
    verts_new = np.asarray(verts_new, float)
    total = np.zeros(verts_old.shape[:-2] + (3,))
    for k in range(3):
        pts, w, nrm, _ = spacetime_face_quadrature(
            verts_old[..., k, :],
            verts_old[..., (k + 1) % 3, :],
            verts_new[..., k, :],
            verts_new[..., (k + 1) % 3, :],
            dt,
            n_pts,
        )
        total += np.einsum("...q,...qi->...i", w, nrm[..., [0, 1, 3]])
    total[..., 2] += triangle_area(verts_new) - triangle_area(verts_old)
    return total


# ---------------------------------------------------------------------------
# generators


def rectangle_mesh(nx, ny, x0=0.0, y0=0.0, x1=1.0, y1=1.0,
                   periodic_x=False, periodic_y=False):
    """Structured triangulation of a rectangle; squares are split along
    alternating diagonals.  Periodic directions wrap the connectivity (the
    mesh becomes a torus in that direction)."""
    Lx, Ly = x1 - x0, y1 - y0
    mx = nx if periodic_x else nx + 1
    my = ny if periodic_y else ny + 1
    xs = x0 + Lx * np.arange(mx) / nx
    ys = y0 + Ly * np.arange(my) / ny
    nodes = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)

    def nid(i, j):
        si = Lx if (periodic_x and i == nx) else 0.0
        sj = Ly if (periodic_y and j == ny) else 0.0
        return (i % mx) * my + (j % my), np.array([si, sj])

    cells, shifts, tags = [], [], {}
    for i in range(nx):
        for j in range(ny):
            q = [nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)]
            if (i + j) % 2 == 0:
                tri = [(0, 1, 2), (0, 2, 3)]
            else:
                tri = [(0, 1, 3), (1, 2, 3)]
            for t in tri:
                cells.append([q[m][0] for m in t])
                shifts.append([q[m][1] for m in t])
    mesh = MovingMesh(nodes, cells, shifts,
                      period=(Lx if periodic_x else None, Ly if periodic_y else None))
    # tag remaining boundary faces by side
    v = mesh.vertices()
    eps = 1e-9 * max(Lx, Ly)
    tagmap = {}
    for c, k in mesh.faces_bnd:
        mid = 0.5 * (v[c, k] + v[c, (k + 1) % 3])
        if abs(mid[0] - x0) < eps:
            tagmap[(c, k)] = "left"
        elif abs(mid[0] - x1) < eps:
            tagmap[(c, k)] = "right"
        elif abs(mid[1] - y0) < eps:
            tagmap[(c, k)] = "bottom"
        elif abs(mid[1] - y1) < eps:
            tagmap[(c, k)] = "top"
        else:
            raise MeshError("untagged boundary face in rectangle mesh")
    mesh.side_of_face = tagmap
    return mesh


def disc_mesh(n_rings, radius=1.0):
    """Concentric-ring triangulation of a disc: ring k carries 6k nodes,
    6*n_rings^2 cells total.  The outer boundary is a single side 'outer'."""
    nodes = [(0.0, 0.0)]
    ring_start = [0, 1]
    for k in range(1, n_rings + 1):
        r = radius * k / n_rings
        m = 6 * k
        ang = 2.0 * np.pi * np.arange(m) / m
        for a in ang:
            nodes.append((r * np.cos(a), r * np.sin(a)))
        ring_start.append(ring_start[-1] + m)
    cells = []
    for k in range(1, n_rings + 1):
        inner0, outer0 = ring_start[k - 1], ring_start[k]
        n_in, n_out = max(6 * (k - 1), 1), 6 * k
        io, ii = 0, 0
        # walk both rings once, stitching with the shorter diagonal
        for _ in range(n_in + n_out):
            o1, o2 = outer0 + io % n_out, outer0 + (io + 1) % n_out
            i1, i2 = inner0 + ii % n_in, inner0 + (ii + 1) % n_in
            if io >= n_out:
                cells.append((o1, i2, i1))
                ii += 1
                continue
            if ii >= n_in or n_in == 1:
                cells.append((o1, o2, i1))
                io += 1
                if n_in == 1 and io >= n_out:
                    break
                continue
            fo = (io + 1) / n_out
            fi = (ii + 1) / n_in
            if fo <= fi:
                cells.append((o1, o2, i1))
                io += 1
            else:
                cells.append((o1, i2, i1))
                ii += 1
    mesh = MovingMesh(np.asarray(nodes), cells)
    mesh.side_of_face = {(int(c), int(k)): "outer" for c, k in mesh.faces_bnd}
    return mesh


# ---------------------------------------------------------------------------
# plain-text mesh files


def write_mesh(path, mesh: MovingMesh):
    with open(path, "w") as f:
        f.write(f"NODES {len(mesh.nodes)} CELLS {mesh.n_cells}\n")
        for x, y in mesh.nodes:
            f.write(f"{x:.17g} {y:.17g}\n")
        for tri in mesh.cells:
            f.write(f"{tri[0] + 1} {tri[1] + 1} {tri[2] + 1}\n")
        tagged = [
            (c, k, t)
            for (c, k), t in sorted(mesh.boundary_tag.items())
        ]
        if tagged:
            f.write(f"BOUNDARY {len(tagged)}\n")
            for c, k, t in tagged:
                f.write(f"{c + 1} {k + 1} {t}\n")


def read_mesh(path):
    """Read the plain-text format; periodic_x / periodic_y face tags are
    resolved by coordinate matching and folded into the connectivity."""
    with open(path) as f:
        toks = f.readline().split()
        if len(toks) != 4 or toks[0] != "NODES" or toks[2] != "CELLS":
            raise MeshError(f"bad mesh header in {path}")
        n_nodes, n_cells = int(toks[1]), int(toks[3])
        nodes = np.array(
            [[float(t) for t in f.readline().split()] for _ in range(n_nodes)]
        )
        cells = np.array(
            [[int(t) - 1 for t in f.readline().split()] for _ in range(n_cells)],
            dtype=np.int64,
        )
        boundary = []
        line = f.readline().split()
        if line and line[0] == "BOUNDARY":
            for _ in range(int(line[1])):
                c, k, tag = f.readline().split()
                boundary.append((int(c) - 1, int(k) - 1, tag))
    per_tags = {t for _, _, t in boundary if t.startswith("periodic")}
    if not per_tags:
        mesh = MovingMesh(nodes, cells)
        mesh.set_boundary_tags({(c, k): t for c, k, t in boundary})
        return mesh
    # periodic identification: map each node on the high side onto its
    # partner on the low side and record the shift
    remap = {}
    shift = np.zeros((len(nodes), 2))
    for axis, tag in ((0, "periodic_x"), (1, "periodic_y")):
        fids = [(c, k) for c, k, t in boundary if t == tag]
        if not fids:
            continue
        nid = set()
        for c, k in fids:
            nid.add(cells[c, k])
            nid.add(cells[c, (k + 1) % 3])
        nid = np.array(sorted(nid))
        lo, hi = nodes[nid, axis].min(), nodes[nid, axis].max()
        L = hi - lo
        tol = 1e-8 * max(L, 1.0)
        low_ids = nid[np.abs(nodes[nid, axis] - lo) < tol]
        high_ids = nid[np.abs(nodes[nid, axis] - hi) < tol]
        other = 1 - axis
        for h in high_ids:
            d = np.abs(nodes[low_ids, other] - nodes[h, other])
            m = int(np.argmin(d))
            if d[m] > tol:
                raise MeshError("unmatched periodic boundary node")
            remap[int(h)] = int(low_ids[m])
            shift[int(h), axis] = L
    # compose chains (corner nodes mapped twice)
    def resolve(i):
        s = np.zeros(2)
        while i in remap:
            s += shift[i]
            i = remap[i]
        return i, s

    new_cells = cells.copy()
    tri_shift = np.zeros((n_cells, 3, 2))
    for c in range(n_cells):
        for k in range(3):
            i, s = resolve(int(cells[c, k]))
            new_cells[c, k] = i
            tri_shift[c, k] = s
    mesh = MovingMesh(nodes, new_cells, tri_shift)
    mesh.set_boundary_tags(
        {(c, k): t for c, k, t in boundary if not t.startswith("periodic")}
    )
    return mesh


# ---------------------------------------------------------------------------
# point location


def locate_points(mesh: MovingMesh, pts, nodes=None, tol=1e-10):
    """Containing cell of each query point (-1 if outside), brute force but
    vectorized; fine for line cuts and error quadrature.  On periodic meshes
    unlocated points are retried at their periodic images; returns
    (cells, points) where points are the (possibly shifted) matched
    coordinates."""
    pts = np.asarray(pts, dtype=float).copy()
    out = _locate(mesh, pts, nodes, tol)
    period = getattr(mesh, "period", None)
    if period is not None and np.any(out < 0):
        sx = [0.0] if not period[0] else [0.0, period[0], -period[0]]
        sy = [0.0] if not period[1] else [0.0, period[1], -period[1]]
        for dx in sx:
            for dy in sy:
                if dx == 0.0 and dy == 0.0:
                    continue
                miss = out < 0
                if not np.any(miss):
                    break
                trial = pts[miss] + [dx, dy]
                got = _locate(mesh, trial, nodes, tol)
                hit = got >= 0
                idx = np.where(miss)[0][hit]
                out[idx] = got[hit]
                pts[idx] = trial[hit]
    return out, pts


def _locate(mesh, pts, nodes, tol):
    out = np.full(len(pts), -1, dtype=np.int64)
    v0, J, Jinv = mesh.jacobians(nodes)
    for s in range(0, len(pts), 512):
        blk = pts[s : s + 512]
        loc = np.einsum("cij,pcj->pci", Jinv, blk[:, None, :] - v0[None, :, :])
        ok = (
            (loc[..., 0] >= -tol)
            & (loc[..., 1] >= -tol)
            & (loc.sum(axis=-1) <= 1.0 + tol)
        )
        hit = ok.argmax(axis=1)
        found = ok[np.arange(len(blk)), hit]
        out[s : s + 512] = np.where(found, hit, -1)
    return out
