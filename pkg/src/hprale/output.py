"""Simulation output: legacy-ASCII VTK unstructured grids with cell data,
reconstruction line cuts as CSV, and the per-step diagnostics table."""

from __future__ import annotations

import csv
import os

import numpy as np

from . import physics as ph
from .mesh import MovingMesh, locate_points


def cell_fields(Q, mat):
    """Derived cell fields written to every output: primitive quantities,
    stress components and the plastic rate."""
    prim = ph.cons_to_prim(Q, mat, check=False)
    sigma = ph.shear_stress(Q, mat)
    sI = ph.stress_intensity(sigma)
    eta = sI / mat.sigma0 if mat.sigma0 > 0.0 else np.zeros_like(sI)
    out = {
        "rho": Q[:, ph.RHO],
        "p": prim[:, ph.EN],
        "eta": eta,
    }
    vel = prim[:, ph.MOM]
    names = ("11", "12", "13", "21", "22", "23", "31", "32", "33")
    for i, nm in enumerate(names):
        out[f"A{nm}"] = Q[:, 4 + i]
    for (i, j) in ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)):
        out[f"sigma{i+1}{j+1}"] = sigma[:, i, j]
    return out, vel, prim[:, ph.RJ]


def write_vtk(path, mesh: MovingMesh, Q, mat, title="hpr-ale output"):
    """Legacy ASCII UNSTRUCTURED_GRID file with per-cell data."""
    fields, vel, J = cell_fields(Q, mat)
    verts = mesh.vertices()
    # unwrapped vertex soup keeps periodic cells contiguous in the viewer
    pts = verts.reshape(-1, 2)
    n_pts = len(pts)
    n_cells = mesh.n_cells
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(title[:255] + "\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {n_pts} double\n")
        for x, y in pts:
            f.write(f"{x:.16g} {y:.16g} 0\n")
        f.write(f"CELLS {n_cells} {4 * n_cells}\n")
        for c in range(n_cells):
            f.write(f"3 {3*c} {3*c+1} {3*c+2}\n")
        f.write(f"CELL_TYPES {n_cells}\n")
        f.write("5\n" * n_cells)
        f.write(f"CELL_DATA {n_cells}\n")
        for name, data in fields.items():
            f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            f.write("\n".join(f"{v:.16g}" for v in data) + "\n")
        f.write("VECTORS velocity double\n")
        for v in vel:
            f.write(f"{v[0]:.16g} {v[1]:.16g} {v[2]:.16g}\n")
        f.write("VECTORS thermal_impulse double\n")
        for v in J:
            f.write(f"{v[0]:.16g} {v[1]:.16g} {v[2]:.16g}\n")


def sample_cut(mesh: MovingMesh, recon, coeffs, mat, cut):
    """Sample the reconstruction along an axis-aligned segment.

    ``cut`` = (axis, value, lo, hi, n); returns a record dict of columns.
    Points outside the (possibly moved) mesh are dropped.
    """
    axis, value, lo, hi, n = cut
    s = np.linspace(lo, hi, n)
    if axis == "y":
        pts = np.column_stack([s, np.full(n, value)])
    else:
        pts = np.column_stack([np.full(n, value), s])
    cells, adj = locate_points(mesh, pts)
    ok = cells >= 0
    vals = recon.evaluate_at_physical(coeffs, cells[ok], adj[ok])
    prim = ph.cons_to_prim(vals, mat, check=False)
    sigma = ph.shear_stress(vals, mat)
    sI = ph.stress_intensity(sigma)
    cols = {
        "x": pts[ok, 0],
        "y": pts[ok, 1],
        "rho": vals[:, ph.RHO],
        "u": prim[:, 1],
        "v": prim[:, 2],
        "w": prim[:, 3],
        "p": prim[:, ph.EN],
    }
    names = ("11", "12", "13", "21", "22", "23", "31", "32", "33")
    for i, nm in enumerate(names):
        cols[f"A{nm}"] = vals[:, 4 + i]
    for k, nm in enumerate(("J1", "J2", "J3")):
        cols[nm] = prim[:, 13 + k]
    for (i, j) in ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)):
        cols[f"sigma{i+1}{j+1}"] = sigma[:, i, j]
    cols["eta"] = sI / mat.sigma0 if mat.sigma0 > 0.0 else np.zeros_like(sI)
    return cols


def write_csv(path, cols, header_comment=None):
    keys = list(cols.keys())
    with open(path, "w", newline="") as f:
        if header_comment:
            f.write(f"# {header_comment}\n")
        w = csv.writer(f)
        w.writerow(keys)
        for row in zip(*(np.asarray(cols[k]) for k in keys)):
            w.writerow([f"{v:.12g}" for v in row])


def read_csv(path):
    with open(path) as f:
        rows = [r for r in f if not r.startswith("#")]
    rd = csv.reader(rows)
    keys = next(rd)
    data = np.array([[float(v) for v in row] for row in rd])
    return {k: data[:, i] for i, k in enumerate(keys)}


class DiagnosticsLog:
    """Per-step solver health: timestep, mesh quality, fallbacks,
    conservation totals, the energy split and the distortion-determinant
    compatibility drift."""

    COLS = (
        "step", "t", "dt", "min_insphere", "predictor_fallbacks", "omega",
        "mass", "mom_x", "mom_y", "energy",
        "e_kinetic", "e_internal", "e_mesoscopic",
        "detA_drift",
    )

    def __init__(self):
        self.rows = []

    def record(self, step, t, dt, mesh, Q, mat, fallbacks=0, omega=0.0):
        area = mesh.areas()
        mass = float((area * Q[:, ph.RHO]).sum())
        momx = float((area * Q[:, 1]).sum())
        momy = float((area * Q[:, 2]).sum())
        en = float((area * Q[:, ph.EN]).sum())
        v = ph.velocity(Q)
        ekin = float((area * 0.5 * Q[:, ph.RHO] *
                      np.einsum("ci,ci->c", v, v)).sum())
        A = ph.distortion(Q)
        J = Q[:, ph.RJ] / Q[:, ph.RHO, None]
        emeso = float((area * Q[:, ph.RHO] *
                       ph.mesoscopic_energy(A, J, mat)).sum())
        eint = en - ekin - emeso
        drift = float(np.abs(np.linalg.det(A) - Q[:, ph.RHO] / mat.rho0).max())
        self.rows.append((
            step, t, dt, float(mesh.insphere_diameters().min()), int(fallbacks),
            float(omega), mass, momx, momy, en, ekin, eint, emeso, drift,
        ))

    def write(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.COLS)
            for r in self.rows:
                w.writerow([f"{v:.14g}" if isinstance(v, float) else v for v in r])
