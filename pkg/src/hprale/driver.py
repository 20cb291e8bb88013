"""Run orchestration: the step loop (timestep, predictor, mesh motion,
fluxes, update, diagnostics), output writing and the convergence harness."""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import physics as ph
from .alefv import AleFvUpdate
from .basis import triangle_quadrature
from .config import (CaseConfig, build_mesh, exact_solution_function,
                     initial_state_function)
from .mesh import MovingMesh
from .motion import (BoundaryNodeConstraints, compute_timestep, nodal_velocity,
                     rezone_relax)
from .output import DiagnosticsLog, sample_cut, write_csv, write_vtk
from .predictor import PredictorData, SpaceTimePredictor, solve_strain_relaxation
from .weno import WenoReconstructor, cell_averages_of_function

log = logging.getLogger("hprale")


class Solver:
    """One configured case bound to its mesh, reconstruction, predictor and
    update operators."""

    def __init__(self, cfg: CaseConfig, workers=1, velocity_field=None):
        self.cfg = cfg
        self.mat = cfg.material
        self.mesh = build_mesh(cfg)
        self.M = cfg.M
        self.workers = max(1, int(workers))
        w = dict(lambda_central=1e5, lambda_side=1.0, eps=1e-14, power=8)
        w.update({f"lambda_{k}" if k in ("central", "side") else k: v
                  for k, v in cfg.weno.items()})
        self.recon = WenoReconstructor(
            self.mesh, self.M, w["lambda_central"], w["lambda_side"],
            w["eps"], w["power"],
        )
        self.velocity_field = velocity_field
        self.pred = SpaceTimePredictor(
            self.M, self.mat, motion=cfg.motion, velocity_field=velocity_field,
        )
        specs = {t: cfg.boundary_spec for t in set(cfg.boundary_map.values())}
        specs.setdefault("transmissive", cfg.boundary_spec)
        self.update_op = AleFvUpdate(
            self.mesh, self.M, self.mat, specs, source_mode=cfg.source_mode,
        )
        self.constraints = BoundaryNodeConstraints.from_mesh(
            self.mesh, cfg.boundary_spec.moving
        )
        self.diag = DiagnosticsLog()
        self.t = 0.0
        self.step_count = 0
        self.Q = self.project_initial()
        self._pool = (
            ThreadPoolExecutor(max_workers=self.workers) if self.workers > 1 else None
        )

    def project_initial(self):
        f = initial_state_function(self.cfg)
        return cell_averages_of_function(self.mesh, f, degree=2 * self.M + 2)

    # -- one step -------------------------------------------------------------

    def advance(self, dt_cap=np.inf):
        cfg = self.cfg
        mesh = self.mesh
        coeffs = self.recon.reconstruct(self.Q)
        wnod = np.einsum("sl,clv->csv", self.pred.stb.modal_at_nodes, coeffs)
        nvel = nodal_velocity(
            mesh, self.recon, coeffs, cfg.motion, self.velocity_field, self.t
        )
        dt = compute_timestep(
            mesh, self.Q, self.mat, cfg.cfl, nvel,
            max_volume_ratio=cfg.max_volume_ratio, dt_cap=dt_cap,
            t_floor=1e-14 * max(cfg.t_final, 1.0),
        )
        pred = self._predict(mesh.vertices(), wnod, dt)
        omega = 0.0
        if cfg.motion == "eulerian":
            mesh.nodes_new = mesh.nodes.copy()
        else:
            lagr = mesh.nodes + dt * nvel
            mesh.nodes_new, omega = rezone_relax(
                mesh, lagr, self.constraints, cfg.omega_policy, self.t + dt
            )
        Qn, stats = self.update_op.update(self.Q, pred, dt, t0=self.t)
        if cfg.source_mode == "split":
            Qn = self._split_sources(Qn, dt)
        self.Q = Qn
        self.t += dt
        self.step_count += 1
        mesh.commit_motion()
        self.diag.record(
            self.step_count, self.t, dt, mesh, self.Q, self.mat,
            fallbacks=int(pred.fallback.sum()), omega=omega,
        )
        return dt

    def _predict(self, verts, wnod, dt):
        if self._pool is None or len(verts) < 512:
            return self.pred.predict(verts, wnod, dt, t0=self.t)
        n = len(verts)
        chunk = (n + self.workers - 1) // self.workers
        parts = list(
            self._pool.map(
                lambda s: self.pred.predict(
                    verts[s : s + chunk], wnod[s : s + chunk], dt, t0=self.t
                ),
                range(0, n, chunk),
            )
        )
        return PredictorData(
            M=self.M, dt=dt,
            qhat=np.concatenate([p.qhat for p in parts]),
            shat=np.concatenate([p.shat for p in parts]),
            xhat=np.concatenate([p.xhat for p in parts]),
            vhat=np.concatenate([p.vhat for p in parts]),
            fallback=np.concatenate([p.fallback for p in parts]),
        )

    def _split_sources(self, Q, dt):
        """Classical source splitting: after the homogeneous update, relax
        the cell averages through the algebraic ODE over dt (implicit)."""
        mat = self.mat
        if mat.c_s > 0.0 and mat.tau1_mode != "infinite":
            prim = ph.cons_to_prim(Q, mat, check=False)
            tau1 = ph.relaxation_time(prim, mat)
            A = ph.distortion(Q)
            Anew, ok = solve_strain_relaxation(
                A, np.asarray(dt, dtype=float), tau1, A.copy()
            )
            if not np.all(ok):
                log.warning("split source solve failed in %d cells", (~ok).sum())
                Anew[~ok] = A[~ok]
            Q = Q.copy()
            Q[:, ph.DIST] = Anew.reshape(-1, 9)
        if mat.heat_conduction_active:
            prim = ph.cons_to_prim(Q, mat, check=False)
            T = ph.temperature(prim[:, ph.RHO], prim[:, ph.EN], mat)
            c = (T / mat.T0) * (mat.rho0 / Q[:, ph.RHO]) / mat.tau2_resolved
            Q = Q.copy()
            Q[:, ph.RJ] = Q[:, ph.RJ] / (1.0 + dt * c[:, None])
        return Q

    # -- full runs --------------------------------------------------------------

    def run(self, outdir=None, write_every=None):
        cfg = self.cfg
        t_f = cfg.t_final
        outputs = sorted(set(t for t in cfg.output_times if 0.0 < t < t_f))
        outputs.append(t_f)
        if outdir:
            os.makedirs(outdir, exist_ok=True)
            self._write_state(outdir, label="0000")
        t_start = time.time()
        k_out = 0
        while self.t < t_f - 1e-12 * max(t_f, 1.0):
            dt = self.advance(dt_cap=outputs[k_out] - self.t)
            log.debug("step %d: t=%.6g dt=%.3g", self.step_count, self.t, dt)
            while k_out < len(outputs) and self.t >= outputs[k_out] - 1e-12 * max(t_f, 1.0):
                k_out += 1
                if outdir:
                    self._write_state(outdir, label=f"{k_out:04d}")
            if t_f == 0.0:
                break
        wall = time.time() - t_start
        summary = self.summary(wall)
        if outdir:
            self._write_state(outdir, label="final")
            self.diag.write(os.path.join(outdir, "diagnostics.csv"))
            with open(os.path.join(outdir, "summary.json"), "w") as f:
                json.dump(summary, f, indent=2)
        return summary

    def _write_state(self, outdir, label):
        cfg = self.cfg
        if cfg.write_vtk:
            write_vtk(
                os.path.join(outdir, f"{cfg.name}_{label}.vtk"),
                self.mesh, self.Q, self.mat,
                title=f"{cfg.name} t={self.t:.8g}",
            )
        if cfg.cuts:
            coeffs = self.recon.reconstruct(self.Q)
            for idx, cut in enumerate(cfg.cuts):
                cols = sample_cut(self.mesh, self.recon, coeffs, self.mat, cut)
                write_csv(
                    os.path.join(outdir, f"{cfg.name}_{label}_cut{idx}.csv"),
                    cols,
                    header_comment=(
                        f"case={cfg.name} t={self.t:.8g} cut={cut}"
                    ),
                )

    def summary(self, wall=0.0):
        area = self.mesh.areas()
        out = {
            "case": self.cfg.name,
            "t_final": self.t,
            "steps": self.step_count,
            "cells": int(self.mesh.n_cells),
            "wall_seconds": wall,
            "mass": float((area * self.Q[:, ph.RHO]).sum()),
            "energy": float((area * self.Q[:, ph.EN]).sum()),
            "predictor_fallbacks_total": int(
                sum(r[4] for r in self.diag.rows)
            ),
        }
        err = self.l2_error()
        if err is not None:
            out["l2_rho_error"] = err
            out["h"] = self.mesh_size()
        return out

    def mesh_size(self):
        """Characteristic mesh size: sqrt(2 * mean cell area) (equals the
        structured generator pitch)."""
        return float(np.sqrt(2.0 * self.mesh.areas().mean()))

    def l2_error(self, component=ph.RHO):
        exact = exact_solution_function(self.cfg)
        if exact is None:
            return None
        coeffs = self.recon.reconstruct(self.Q)
        pts, w = triangle_quadrature(2 * self.M + 2)
        verts = self.mesh.vertices()
        phys = (
            verts[:, None, 0, :]
            + pts[None, :, 0, None] * (verts[:, None, 1, :] - verts[:, None, 0, :])
            + pts[None, :, 1, None] * (verts[:, None, 2, :] - verts[:, None, 0, :])
        )
        num = self.recon.evaluate(
            coeffs, np.arange(self.mesh.n_cells)[:, None], pts[None, :, :]
        )[..., component]
        ex = exact(phys.reshape(-1, 2), self.t)[..., component].reshape(num.shape)
        area = self.mesh.areas()
        return float(
            np.sqrt((2.0 * area[:, None] * w[None, :] * (num - ex) ** 2).sum())
        )


def run_case(cfg: CaseConfig, outdir=None, workers=1, velocity_field=None):
    solver = Solver(cfg, workers=workers, velocity_field=velocity_field)
    return solver.run(outdir=outdir)


def convergence_study(cfg: CaseConfig, resolutions, workers=1):
    """Run the case on a sequence of generator resolutions and report
    (h, L2 error, observed order) rows for the density."""
    if exact_solution_function(cfg) is None:
        raise ValueError(f"case {cfg.initial!r} has no exact solution")
    rows = []
    for n in resolutions:
        c = CaseConfig(**{**cfg.__dict__})
        c.mesh_spec = dict(cfg.mesh_spec)
        if c.mesh_spec["kind"] != "rectangle":
            raise ValueError("convergence studies use the rectangle generator")
        c.mesh_spec["nx"] = c.mesh_spec["ny"] = int(n)
        solver = Solver(c, workers=workers)
        solver.run()
        err = solver.l2_error()
        h = solver.mesh_size()
        order = None
        if rows and err > 0.0 and rows[-1][1] > 0.0:
            if abs(np.log(rows[-1][0] / h)) < 1e-12:
                order = float("nan")   # identical meshes: order undefined
            else:
                order = float(np.log(rows[-1][1] / err) / np.log(rows[-1][0] / h))
        rows.append((h, err, order))
    return rows
