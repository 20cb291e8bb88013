"""Case configuration: plain-text [section] key = value files, schema
validation, material/mesh/boundary construction, and the named built-in
initial conditions."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

import numpy as np

from . import physics as ph
from .boundary import BoundarySpec, MovingBoundary
from .mesh import BOUNDARY_TAGS, MovingMesh, disc_mesh, read_mesh, rectangle_mesh
from .physics import INF_RELAXATION, MaterialModel
from .refsol import BeckerShock, taylor_green_exact, vortex_state


class ConfigError(ValueError):
    pass


IC_NAMES = (
    "vortex", "taylor_green", "viscous_shock", "explosion", "rp1", "rp2",
    "piston", "beryllium", "taylor_bar", "uniform",
)

_SECTIONS = {"case", "material", "mesh", "scheme", "boundary", "ic", "output"}


@dataclass
class CaseConfig:
    name: str
    initial: str
    t_final: float
    material: MaterialModel
    mesh_spec: dict
    order: int = 3
    cfl: float = 0.5
    source_mode: str = "integrated"
    motion: str = "lagrangian"
    omega_policy: str = "auto"
    max_volume_ratio: float = 1.2
    boundary_map: dict = field(default_factory=dict)   # side -> tag
    boundary_spec: BoundarySpec = field(default_factory=BoundarySpec)
    ic_params: dict = field(default_factory=dict)
    output_times: tuple = ()
    write_vtk: bool = True
    cuts: tuple = ()
    weno: dict = field(default_factory=dict)

    @property
    def M(self):
        return self.order - 1


def _get(sec, key, cast=str, default=None, required=False):
    if key not in sec:
        if required:
            raise ConfigError(f"missing required key {key!r}")
        return default
    raw = sec[key].strip()
    if cast is bool:
        if raw.lower() in ("true", "yes", "1", "on"):
            return True
        if raw.lower() in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"bad boolean {key} = {raw!r}")
    try:
        return cast(raw)
    except ValueError as e:
        raise ConfigError(f"bad value {key} = {raw!r}: {e}") from None


def _floats(raw):
    return tuple(float(t) for t in raw.replace(",", " ").split())


def parse_relaxation(raw, which):
    """'infinite' | 'constant:VALUE' | 'from_viscosity:MU' | 'power_law'."""
    raw = raw.strip()
    if raw == "infinite":
        return {"mode": "infinite"}
    if raw == "power_law":
        if which != "tau1":
            raise ConfigError("power_law applies to tau1 only")
        return {"mode": "power_law"}
    if ":" in raw:
        mode, val = raw.split(":", 1)
        mode = mode.strip()
        if mode == "constant":
            return {"mode": "constant", "value": float(val)}
        if mode == "from_viscosity" and which == "tau1":
            return {"mode": "from_viscosity", "mu": float(val)}
    raise ConfigError(f"bad {which} specification {raw!r}")


def load_config(path_or_text, is_text=False):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        if is_text:
            cp.read_file(io.StringIO(path_or_text))
        else:
            with open(path_or_text) as f:
                cp.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config: {e}") from None
    unknown = set(cp.sections()) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    for s in ("case", "material", "mesh"):
        if s not in cp:
            raise ConfigError(f"missing [{s}] section")

    case = cp["case"]
    name = _get(case, "name", default="case")
    initial = _get(case, "initial", required=True)
    if initial not in IC_NAMES:
        raise ConfigError(f"unknown initial condition {initial!r}")
    t_final = _get(case, "t_final", float, required=True)
    if t_final < 0.0:
        raise ConfigError("t_final must be non-negative")

    m = cp["material"]
    eos = _get(m, "eos", default="ideal")
    t1 = parse_relaxation(_get(m, "tau1", default="infinite"), "tau1")
    t2 = parse_relaxation(_get(m, "tau2", default="infinite"), "tau2")
    mat = MaterialModel(
        eos=eos,
        gamma=_get(m, "gamma", float, 1.4),
        c_v=_get(m, "c_v", float, 1.0),
        rho0=_get(m, "rho0", float, 1.0),
        p0=_get(m, "p0", float, 0.0),
        c0=_get(m, "c0", float, 1.0),
        c_s=_get(m, "c_s", float, 0.0),
        alpha=_get(m, "alpha", float, 0.0),
        Gamma0=_get(m, "Gamma0", float, 0.0),
        s_mg=_get(m, "s_mg", float, 0.0),
        sigma0=_get(m, "sigma0", float, 0.0),
        tau0=_get(m, "tau0", float, 0.0),
        n_exp=_get(m, "n_exp", float, 1.0),
        tau1_mode=t1["mode"],
        tau1=t1.get("value", INF_RELAXATION),
        mu=t1.get("mu", 0.0),
        tau2_mode=t2["mode"],
        tau2=t2.get("value", INF_RELAXATION),
        T0=_get(m, "T0", float, 1.0),
    )
    if mat.heat_conduction_active and mat.eos != "ideal":
        raise ConfigError("heat conduction requires the ideal-gas EOS")

    ms = cp["mesh"]
    kind = _get(ms, "kind", default="rectangle")
    mesh_spec = {"kind": kind}
    if kind == "rectangle":
        mesh_spec.update(
            nx=_get(ms, "nx", int, required=True),
            ny=_get(ms, "ny", int, required=True),
            x0=_get(ms, "x0", float, 0.0),
            y0=_get(ms, "y0", float, 0.0),
            x1=_get(ms, "x1", float, 1.0),
            y1=_get(ms, "y1", float, 1.0),
            periodic_x=_get(ms, "periodic_x", bool, False),
            periodic_y=_get(ms, "periodic_y", bool, False),
        )
    elif kind == "disc":
        mesh_spec.update(
            rings=_get(ms, "rings", int, required=True),
            radius=_get(ms, "radius", float, 1.0),
        )
    elif kind == "file":
        mesh_spec.update(file=_get(ms, "file", required=True))
    else:
        raise ConfigError(f"unknown mesh kind {kind!r}")
    motion = _get(ms, "motion", default="lagrangian")
    if motion not in ("lagrangian", "eulerian", "prescribed"):
        raise ConfigError(f"unknown mesh motion {motion!r}")
    omega_policy = _get(ms, "omega_policy", default="auto")
    max_ratio = _get(ms, "max_volume_ratio", float, 1.2)

    sch = cp["scheme"] if "scheme" in cp else {}
    order = _get(sch, "order", int, 3) if sch else 3
    if order not in (2, 3, 4):
        raise ConfigError("scheme order must be 2, 3 or 4")
    cfl = _get(sch, "cfl", float, 0.5) if sch else 0.5
    if not 0.0 < cfl <= 0.5:
        raise ConfigError("cfl must be in (0, 1/2] for triangular meshes")
    source_mode = _get(sch, "source_mode", default="integrated") if sch else "integrated"
    if source_mode not in ("integrated", "split"):
        raise ConfigError(f"unknown source mode {source_mode!r}")
    weno = {}
    if sch:
        for key, cast in (("weno_lambda_central", float), ("weno_lambda_side", float),
                          ("weno_eps", float), ("weno_power", int)):
            v = _get(sch, key, cast, None)
            if v is not None:
                weno[key.replace("weno_", "")] = v

    bmap, bspec = {}, BoundarySpec()
    if "boundary" in cp:
        b = cp["boundary"]
        for key in b:
            if key == "moving_velocity":
                vx, vy = _floats(b[key])
                bspec.moving = MovingBoundary(vx, vy)
            elif key == "traction_tau_factor":
                bspec.traction_tau_factor = float(b[key])
            else:
                tag = b[key].strip()
                if tag not in BOUNDARY_TAGS:
                    raise ConfigError(f"unknown boundary tag {tag!r} for side {key!r}")
                bmap[key] = tag

    ic_params = {}
    if "ic" in cp:
        ic_params = {k: float(v) for k, v in cp["ic"].items()}

    out_times, cuts, write_vtk = (), (), True
    if "output" in cp:
        o = cp["output"]
        if "times" in o:
            out_times = _floats(o["times"])
        write_vtk = _get(o, "vtk", bool, True)
        if "cuts" in o:
            cuts = tuple(
                _parse_cut(tok) for tok in o["cuts"].split(";") if tok.strip()
            )
    return CaseConfig(
        name=name, initial=initial, t_final=t_final, material=mat,
        mesh_spec=mesh_spec, order=order, cfl=cfl, source_mode=source_mode,
        motion=motion, omega_policy=omega_policy, max_volume_ratio=max_ratio,
        boundary_map=bmap, boundary_spec=bspec, ic_params=ic_params,
        output_times=out_times, write_vtk=write_vtk, cuts=cuts, weno=weno,
    )


def _parse_cut(tok):
    """'y:0.025:0:1:400' = cut along the line y=0.025 for x in [0,1], 400
    samples (or 'x:...' for a vertical cut)."""
    parts = tok.strip().split(":")
    if len(parts) != 5 or parts[0] not in ("x", "y"):
        raise ConfigError(f"bad cut specification {tok!r}")
    return (parts[0], float(parts[1]), float(parts[2]), float(parts[3]), int(parts[4]))


def build_mesh(cfg: CaseConfig) -> MovingMesh:
    spec = cfg.mesh_spec
    if spec["kind"] == "rectangle":
        mesh = rectangle_mesh(
            spec["nx"], spec["ny"], spec["x0"], spec["y0"], spec["x1"], spec["y1"],
            periodic_x=spec["periodic_x"], periodic_y=spec["periodic_y"],
        )
    elif spec["kind"] == "disc":
        mesh = disc_mesh(spec["rings"], spec["radius"])
    else:
        mesh = read_mesh(spec["file"])
        mesh.set_boundary_tags({})
        return mesh
    # map generator sides to tags
    tags = {}
    for (c, k), side in mesh.side_of_face.items():
        if side not in cfg.boundary_map:
            raise ConfigError(
                f"boundary side {side!r} has no tag in [boundary]"
            )
        tags[(c, k)] = cfg.boundary_map[side]
    mesh.set_boundary_tags(tags)
    return mesh


# ---------------------------------------------------------------------------
# named initial conditions (pointwise primitive fields)


def initial_state_function(cfg: CaseConfig):
    """Returns f(x) -> conserved states (..., 17) for the configured case."""
    mat = cfg.material
    p = cfg.ic_params
    name = cfg.initial

    if name == "vortex":
        return lambda x: vortex_state(x, 0.0, mat)

    if name == "taylor_green":
        C = p.get("pressure_offset", 100.0 / mat.gamma)

        def f(x):
            u, v, pr = taylor_green_exact(x, 0.0, 0.0, mat.gamma, C)
            z = np.zeros_like(u)
            vel = np.stack([u, v, z], axis=-1)
            A = np.broadcast_to(np.eye(3), x.shape[:-1] + (3, 3))
            prim = ph.make_primitive(np.ones_like(u) * mat.rho0, vel,
                                     A, np.zeros_like(vel), pr)
            return ph.prim_to_cons(prim, mat)
        return f

    if name == "viscous_shock":
        shock = BeckerShock(
            Ms=p.get("ms", 2.0), mu=p.get("mu", mat.mu if mat.mu else 2e-2),
            gamma=mat.gamma, rho0=p.get("rho_up", 1.0), c0=p.get("c0", 1.0),
        )
        x0 = p.get("x0", 0.25)

        def f(x):
            rho, u, pr, _sig = shock.lab_frame(x[..., 0], 0.0, x0)
            z = np.zeros_like(u)
            vel = np.stack([u, z, z], axis=-1)
            A = np.cbrt(rho)[..., None, None] * np.eye(3)
            prim = ph.make_primitive(rho, vel, A, np.zeros_like(vel), pr)
            return ph.prim_to_cons(prim, mat)
        return f

    if name == "explosion":
        r_s = p.get("r_split", 0.5)
        inner = (p.get("rho_in", 1.0), p.get("p_in", 1.0))
        outer = (p.get("rho_out", 0.125), p.get("p_out", 0.1))

        def f(x):
            r = np.sqrt(x[..., 0] ** 2 + x[..., 1] ** 2)
            rho = np.where(r <= r_s, inner[0], outer[0])
            pr = np.where(r <= r_s, inner[1], outer[1])
            vel = np.zeros(x.shape[:-1] + (3,))
            A = np.cbrt(rho)[..., None, None] * np.eye(3)
            prim = ph.make_primitive(rho, vel, A, np.zeros_like(vel), pr)
            return ph.prim_to_cons(prim, mat)
        return f

    if name in ("rp1", "rp2"):
        xs = p.get("x_split", 0.5)
        if name == "rp1":
            AL = np.array([[0.95, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
            vL = (0.0, 0.0)
        else:
            AL = np.array([[0.95, 0.0, 0.0], [0.05, 1.0, 0.0], [0.0, 0.0, 1.0]])
            vL = (0.0, 1.0)
        AR = np.eye(3)

        def f(x):
            left = x[..., 0] <= xs
            rho = np.full(x.shape[:-1], mat.rho0)
            pr = np.full(x.shape[:-1], mat.p0)
            vel = np.zeros(x.shape[:-1] + (3,))
            vel[..., 0] = np.where(left, vL[0], 0.0)
            vel[..., 1] = np.where(left, vL[1], 0.0)
            A = np.where(left[..., None, None], AL, AR)
            prim = ph.make_primitive(rho, vel, A, np.zeros_like(vel), pr)
            return ph.prim_to_cons(prim, mat)
        return f

    if name in ("piston", "taylor_bar", "uniform"):
        rho = p.get("rho", mat.rho0)
        pr = p.get("p", mat.p0)
        u0 = p.get("u", 0.0)
        v0 = p.get("v", 0.0)
        a_diag = p.get("a_diag", np.cbrt(rho / mat.rho0))

        def f(x):
            sh = x.shape[:-1]
            vel = np.zeros(sh + (3,))
            vel[..., 0] = u0
            vel[..., 1] = v0
            A = a_diag * np.broadcast_to(np.eye(3), sh + (3, 3))
            prim = ph.make_primitive(np.full(sh, rho), vel, A,
                                     np.zeros(sh + (3,)), np.full(sh, pr))
            return ph.prim_to_cons(prim, mat)
        return f

    if name == "beryllium":
        Om = p.get("big_omega", 0.7883401241)
        om = p.get("omega", 0.2359739922)
        amp = p.get("amplitude", 0.004336850425)
        S1 = p.get("s1", 57.64552048)
        C1 = p.get("c1", 56.53585154)

        def f(x):
            xx = x[..., 0]
            v = amp * om * (
                C1 * (np.sinh(Om * (xx + 3.0)) + np.sin(Om * (xx + 3.0)))
                - S1 * (np.cosh(Om * (xx + 3.0)) + np.cos(Om * (xx + 3.0)))
            )
            sh = x.shape[:-1]
            vel = np.zeros(sh + (3,))
            vel[..., 1] = v
            A = np.broadcast_to(np.eye(3), sh + (3, 3))
            prim = ph.make_primitive(np.full(sh, mat.rho0), vel, A,
                                     np.zeros(sh + (3,)), np.full(sh, mat.p0))
            return ph.prim_to_cons(prim, mat)
        return f

    raise ConfigError(f"unknown initial condition {name!r}")


def exact_solution_function(cfg: CaseConfig):
    """Pointwise exact solution f(x, t) for cases that have one (used by the
    convergence harness); None otherwise."""
    mat = cfg.material
    if cfg.initial == "vortex":
        return lambda x, t: vortex_state(x, t, mat)
    return None
