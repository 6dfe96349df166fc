"""Scenario configuration, canonical scenario library and the time loop."""
from __future__ import annotations

import copy
import json
import logging
import time
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError, DomainEscapeError, PoroMPMError
from .fractional import fractional_timestep, free_surface_mask
from .grid import StructuredGrid, corrected_basis
from .mixed import NewmarkParams, SolverSettings, StabilizationParams, advance_timestep
from .particles import (center_of_mass, delta_correction, dump_csv, init_particles, mean_velocity,
                        measure_heights)
from .porous import PorousBlock, build_fields, drag_coefficients, sample_field, tessellate
from .transfer import SCHEMES, BoundaryCondition, apply_boundary_conditions, p2g

log = logging.getLogger(__name__)

G = 9.81

DEFAULTS = {
    "scenario": "custom",
    "grid": {"origin": None, "upper": None, "h": None, "periodic": None},
    "fluid": {"rho": 1000.0, "mu": 1e-3, "gravity": None},
    "fluid_regions": [],
    "ppc": 4,
    "field_ppc": 4,
    "porous_blocks": [],
    "boundaries": [],
    "solver": {
        "type": "mixed_vms",
        "newmark": {"gamma": 1.0, "beta": 0.5},
        "stabilization": {"c1": 4.0, "c2": 2.0, "tau_dyn": 1.0, "enabled": True},
        "rel_tol": 1e-10,
        "energy_tol": 1e-15,
        "max_iterations": 20,
        "linear_tol": 1e-10,
        "kernel_iterations": 1,
        "pressure_pin": None,
        "pressure_surface_fraction": None,
        "free_surface_threshold": 0.5,
    },
    "transfer": {"scheme": "flip"},
    "time": {"dt": 1e-3, "t_end": 1.0},
    "output": {"dir": None, "every": 1, "dump_every": 0},
    "features": {"delta_correction": False, "delta_alpha": 0.01},
    "diagnostics": {"interface": None},
    "oracle": None,
}

SOLVER_ALIASES = {"mixed": "mixed_vms", "mixed_vms": "mixed_vms", "fractional": "fractional_step",
                  "fractional_step": "fractional_step"}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(cfg):
    """Expand defaults and validate a scenario config tree."""
    c = _merge(DEFAULTS, cfg)
    g = c["grid"]
    if g["origin"] is None or g["upper"] is None or g["h"] is None:
        raise ConfigurationError("grid needs origin, upper and h")
    dim = len(g["origin"])
    if g["periodic"] is None:
        g["periodic"] = [False] * dim
    if c["fluid"]["gravity"] is None:
        c["fluid"]["gravity"] = [0.0] * (dim - 1) + [-G]
    c["solver"]["type"] = SOLVER_ALIASES.get(c["solver"]["type"], c["solver"]["type"])
    if c["solver"]["type"] not in ("mixed_vms", "fractional_step"):
        raise ConfigurationError(f"unknown solver {c['solver']['type']!r}")
    if c["transfer"]["scheme"] not in SCHEMES:
        raise ConfigurationError(f"unknown transfer scheme {c['transfer']['scheme']!r}")
    dt, t_end = c["time"]["dt"], c["time"]["t_end"]
    if not dt > 0 or t_end < dt:
        raise ConfigurationError("need dt > 0 and t_end >= dt")
    return c


def load_config(path):
    with open(path) as fh:
        return yaml.safe_load(fh)


class Simulation:
    """Particles, fields and solver state for one scenario."""

    def __init__(self, cfg):
        self.cfg = resolve_config(cfg)
        c = self.cfg
        g = c["grid"]
        self.grid = StructuredGrid.from_extents(g["origin"], g["upper"], g["h"], g["periodic"])
        self.dim = self.grid.dim
        fl = c["fluid"]
        self.rho, self.mu = float(fl["rho"]), float(fl["mu"])
        self.gravity = np.asarray(fl["gravity"], dtype=float)
        if len(self.gravity) != self.dim:
            raise ConfigurationError("gravity vector does not match the grid dimension")
        self.blocks = [PorousBlock(**b) for b in c["porous_blocks"]]
        samples = tessellate(self.grid, self.blocks, c["field_ppc"], self.rho, self.mu, float(np.linalg.norm(self.gravity)) or G)
        self.field = build_fields(samples, self.grid)
        sol = c["solver"]
        self.kernel_iterations = int(sol["kernel_iterations"])
        regions = [(r["lower"], r["upper"]) for r in c["fluid_regions"]]
        self.particles = init_particles(regions, c["ppc"], self.grid, self.field, self.rho, self.kernel_iterations)
        if len(self.particles) == 0:
            raise ConfigurationError("scenario has no fluid particles")
        self.bcs = [BoundaryCondition(**b).resolve(self.grid) for b in c["boundaries"]]
        nm = sol["newmark"]
        self.newmark = NewmarkParams(dt=float(c["time"]["dt"]), gamma=nm["gamma"], beta=nm["beta"])
        self.stab = StabilizationParams(**sol["stabilization"])
        self.settings = SolverSettings(rel_tol=sol["rel_tol"], energy_tol=sol["energy_tol"],
                                       max_iterations=sol["max_iterations"], linear_tol=sol["linear_tol"],
                                       kernel_iterations=self.kernel_iterations)
        self.scheme = c["transfer"]["scheme"]
        self.pin = None
        if sol["pressure_pin"] is not None:
            idx = np.rint((np.asarray(sol["pressure_pin"]) - self.grid.origin) / self.grid.h).astype(int)
            self.pin = int(self.grid.node_index(idx))
        self.interface = c["diagnostics"]["interface"]
        self.axis = int(np.argmax(np.abs(self.gravity))) if np.any(self.gravity) else self.dim - 1
        self.t = 0.0
        self.step_count = 0
        self.mass_initial = self.particles.total_mass
        self.records = []
        self.reports = []
        self.last_solution = None
        self._v_ref = None
        self._refresh_particle_fields()

    # -- per step --------------------------------------------------------------
    def _refresh_particle_fields(self):
        P = self.particles
        basis = corrected_basis(P.x, self.grid, self.kernel_iterations)
        fs = sample_field(basis, self.field, self.rho, self.mu)
        P.theta = fs.theta.copy()
        P.volume = P.theta0 * P.volume0 / P.theta
        P.grad_theta = fs.grad_theta.copy()
        P.A_tilde = fs.A_tilde.copy()
        P.B_tilde = fs.B_tilde.copy()
        return basis, fs

    def step(self):
        P = self.particles
        dt = self.newmark.dt
        basis, fs = self._refresh_particle_fields()
        self._step_basis = basis
        state = p2g(P, basis, self.grid, self.scheme)
        cons = apply_boundary_conditions(state, self.bcs, self.grid, dt, self.newmark.gamma, self.newmark.beta)
        if self.cfg["solver"]["type"] == "mixed_vms":
            dry = None
            if self.cfg["solver"]["pressure_surface_fraction"] is not None:
                mask = free_surface_mask(basis, P, self.field, state.active,
                                         self.cfg["solver"]["pressure_surface_fraction"])
                dry = np.flatnonzero(mask.fixed)
            sol, report = advance_timestep(self.grid, P, basis, fs, state, cons, self.newmark, self.stab,
                                           self.settings, self.rho, self.mu, self.gravity, self.scheme,
                                           pressure_pin=self.pin,
                                           dry_nodes=dry)
        else:
            sol = fractional_timestep(self.grid, P, basis, fs, state, cons, self.field, dt, self.rho, self.mu,
                                      self.gravity, self.scheme, self.cfg["solver"]["free_surface_threshold"])
            report = None
        if self.cfg["features"]["delta_correction"]:
            delta_correction(P, self.grid, self.cfg["ppc"], self.cfg["features"]["delta_alpha"])
        self.t = (self.step_count + 1) * dt
        self.step_count += 1
        self.last_solution = sol
        self.reports.append(report)
        rec = self.diagnostics(sol, report)
        self.records.append(rec)
        return rec

    def interface_pressure(self, sol):
        if not self.interface:
            return float("nan")
        ax = int(self.interface["axis"])
        idx = self.grid.plane_index(ax, float(self.interface["position"]))
        nodes = self.grid.plane_nodes(ax, idx)
        act = nodes[sol["active"][nodes]]
        if len(act) == 0:
            return 0.0
        # a barely wetted interface node behaves like a free-surface node
        wet = free_surface_mask(self._step_basis, self.particles, self.field, sol["active"]).fraction[act]
        if np.mean(wet) < 0.5:
            return 0.0
        return float(np.mean(sol["p"][act]))

    def diagnostics(self, sol, report):
        P = self.particles
        x_cm, m = center_of_mass(P)
        v = mean_velocity(P)
        rec = {"t": self.t, "step": self.step_count, "y_cm": float(x_cm[self.axis]),
               "v_mean": float(v[self.axis]), "mass": m,
               "newton_iters": report.newton_iters if report else 0,
               "p_max": float(np.max(np.abs(P.p))), "v_max": float(np.max(np.abs(P.v)))}
        if self.interface:
            above, below = measure_heights(P, int(self.interface["axis"]), float(self.interface["position"]))
            rec.update(h_above=above, h_below=below, p_i=self.interface_pressure(sol))
        return rec

    def diverged(self, rec):
        if not np.all(np.isfinite(self.particles.x)) or not np.all(np.isfinite(self.particles.v)):
            return True
        if self._v_ref is None:
            self._v_ref = max(rec["v_max"], 1e-300)
            return False
        return rec["v_max"] > 1e3 * self._v_ref

    # -- driver ----------------------------------------------------------------
    def run(self, n_steps=None, t_end=None, stop_on_divergence=False, callback=None):
        """Advance until t_end (config default) or n_steps.

        Returns ``"completed"`` or ``"diverged"``; with ``stop_on_divergence``
        a blow-up (non-finite state, domain escape or a 1e3-fold velocity
        growth over step 1) ends the run instead of raising.
        """
        if n_steps is None:
            t_end = self.cfg["time"]["t_end"] if t_end is None else t_end
            n_steps = int(round(t_end / self.newmark.dt))
        for _ in range(n_steps):
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    rec = self.step()
            except (DomainEscapeError, FloatingPointError, PoroMPMError, ValueError) as exc:
                if stop_on_divergence:
                    log.info("run stopped at step %d: %s", self.step_count, exc)
                    return "diverged"
                raise
            if callback is not None:
                callback(self, rec)
            if stop_on_divergence and self.diverged(rec):
                return "diverged"
        return "completed"

    def timeseries(self):
        keys = list(self.records[0].keys()) if self.records else []
        return {k: np.array([r[k] for r in self.records]) for k in keys}


# --- run artifacts -------------------------------------------------------------

def _write_timeseries(path, records):
    if not records:
        Path(path).write_text("")
        return
    keys = list(records[0].keys())
    table = np.array([[r[k] for k in keys] for r in records], dtype=float)
    np.savetxt(path, table, delimiter=",", header=",".join(keys), comments="", fmt="%.17g")


def run_scenario(cfg, out_dir=None, solver=None, scheme=None):
    """Run a scenario and write its artifacts.

    Writes ``config.resolved.yaml``, ``timeseries.csv``, ``solver_log.jsonl``,
    particle dumps under ``particles/`` and ``summary.json``.  Solver errors
    still leave a summary (status ``failed``) before re-raising.
    """
    cfg = copy.deepcopy(cfg)
    if solver:
        cfg.setdefault("solver", {})["type"] = solver
    if scheme:
        cfg.setdefault("transfer", {})["scheme"] = scheme
    sim = Simulation(cfg)
    out = Path(out_dir or sim.cfg["output"]["dir"] or f"runs/{sim.cfg['scenario']}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.yaml").write_text(yaml.safe_dump(sim.cfg, sort_keys=False))
    dump_every = int(sim.cfg["output"]["dump_every"] or 0)
    pdir = out / "particles"
    if dump_every:
        pdir.mkdir(exist_ok=True)
        dump_csv(sim.particles, pdir / "step_000000.csv")
    log_fh = open(out / "solver_log.jsonl", "w")

    def callback(s, rec):
        rep = s.reports[-1]
        if rep is not None:
            log_fh.write(json.dumps(rep.as_dict(s.step_count)) + "\n")
        if dump_every and s.step_count % dump_every == 0:
            dump_csv(s.particles, pdir / f"step_{s.step_count:06d}.csv")

    t0 = time.perf_counter()
    status = "completed"
    error = None
    try:
        status = sim.run(callback=callback, stop_on_divergence=sim.cfg["solver"]["type"] == "fractional_step")
    except PoroMPMError as exc:
        status, error = "failed", exc
    finally:
        log_fh.close()
    wall = time.perf_counter() - t0
    every = max(int(sim.cfg["output"]["every"] or 1), 1)
    _write_timeseries(out / "timeseries.csv", sim.records[every - 1::every] if every > 1 else sim.records)
    dump_csv(sim.particles, out / "particles_final.csv")
    x_cm, _ = center_of_mass(sim.particles)
    summary = {
        "scenario": sim.cfg["scenario"], "steps": sim.step_count, "wall_time_s": wall,
        "mass_initial": sim.mass_initial, "mass_final": sim.particles.total_mass,
        "y_cm_final": float(x_cm[sim.axis]),
        "max_newton_iters": int(max([r.newton_iters for r in sim.reports if r is not None], default=0)),
        "status": status,
    }
    if error is not None:
        summary["error"] = str(error)
        summary["partial_outputs"] = sorted(p.name for p in out.iterdir())
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    if error is not None:
        raise error
    return sim, summary


# --- canonical scenarios -----------------------------------------------------

def _conductivity_block(lower, upper, theta, K, B=1.75, A=150.0):
    return {"lower": list(lower), "upper": list(upper), "theta": theta, "K": K, "A": A, "B": B,
            "theta_ref": theta}


def _column_geometry(dim, width, lo, hi):
    """Box bounds for a vertical column, 1D or 2D (vertical = last axis)."""
    if dim == 1:
        return [lo], [hi]
    return [0.0, lo], [width, hi]


def _column_bcs(dim):
    if dim == 1:
        return [{"axis": 0, "side": "low", "type": "slip"}]
    return [{"axis": 0, "side": "low", "type": "slip"}, {"axis": 0, "side": "high", "type": "slip"},
            {"axis": 1, "side": "low", "type": "slip"}]


def _column_config(name, dim, width, h, top, blocks, fluid, dt, t_end, ppc=4, interface=None, solver="mixed_vms",
                   oracle=None):
    lo, hi = _column_geometry(dim, width, 0.0, top)
    return {
        "oracle": oracle,
        "scenario": name,
        "grid": {"origin": lo, "upper": hi, "h": h},
        "fluid_regions": [dict(zip(("lower", "upper"), _column_geometry(dim, width, *fluid)))],
        "ppc": ppc,
        "porous_blocks": [_conductivity_block(*_column_geometry(dim, width, b[0], b[1]), *b[2:]) for b in blocks],
        "boundaries": _column_bcs(dim),
        "solver": {"type": solver},
        "time": {"dt": dt, "t_end": t_end},
        "diagnostics": {"interface": None if interface is None else {"axis": dim - 1, "position": interface}},
    }


def case1(n=10, dim=2, dt=1e-3, t_end=5.0, solver="mixed_vms"):
    """Fluid patch L x L infiltrating a porous block L x 2L (theta 0.5, Darcy)."""
    L = 0.2
    h = L / n
    width = L if dim == 2 else h
    cfg = _column_config("case1", dim, width, h, 3 * L, [(0.0, 2 * L, 0.5, 0.1, 0.0)], (2 * L, 3 * L), dt, t_end,
                         interface=2 * L, solver=solver)
    return cfg


def case1_theoretical_ycm(n=10):
    """Centre of mass of the porous block saturated from the bottom.

    The fill level solves sum(theta) = fluid volume on the actual blurred
    porosity profile, which is what a fully conservative run must reach.
    """
    cfg = case1(n=n, dim=1)
    sim = Simulation(cfg)
    ys = np.linspace(0.0, 0.6, 600001)
    basis_theta = _profile(sim, ys)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (basis_theta[1:] + basis_theta[:-1]) * np.diff(ys))])
    fill = np.interp(0.2, cum, ys)
    m = ys <= fill
    return float(np.trapezoid(basis_theta[m] * ys[m], ys[m]) / np.trapezoid(basis_theta[m], ys[m]))


def _profile(sim, ys):
    from .grid import corrected_basis as cb
    b = cb(ys[:, None], sim.grid, sim.kernel_iterations)
    return b.interpolate(sim.field.theta)


def case3(n=20, dim=1, drag="darcy", dt=None, t_end=0.5, solver="mixed_vms"):
    """Fluid block falling through a uniform porous medium (seepage)."""
    L = 0.2
    h = L / n
    dt = 1e-3 * (h / (L / 10)) if dt is None else dt
    B = 0.0 if drag == "darcy" else 1.75
    width = L if dim == 2 else h
    A_t, B_t = case_drag(0.5, 0.1, drag)
    return _column_config(f"case3_{drag}", dim, width, h, 3 * L, [(0.0, 3 * L, 0.5, 0.1, B)], (2 * L, 3 * L),
                          dt, t_end, solver=solver, oracle={"case": "case3", "A": A_t, "B": B_t})


def case4(n=30, dim=2, drag="darcy", dt=None, t_end=2.0, solver="mixed_vms"):
    """Free column h0 = 0.3 dropped on a dry porous bed (theta 0.5, K 0.1).

    The default 2D geometry is one cell wide with slip side walls.
    """
    h0 = 0.3
    h = h0 / n
    dt = 1e-3 * (h / 0.01) if dt is None else dt
    B = 0.0 if drag == "darcy" else 1.75
    y_i = 0.7
    A_t, B_t = case_drag(0.5, 0.1, drag)
    return _column_config(f"case4_{drag}", dim, h, h, y_i + h0, [(0.0, y_i, 0.5, 0.1, B)], (y_i, y_i + h0), dt,
                          t_end, interface=y_i, solver=solver,
                          oracle={"case": "case4", "h0": h0, "theta": 0.5, "A": A_t, "B": B_t})


def case5(n=30, dim=2, drag="darcy", dt=None, t_end=1.0, solver="mixed_vms"):
    """Pore column h0 = 0.3 draining out of the bottom of a porous block."""
    h0 = 0.3
    h = h0 / n
    dt = 1e-3 * (h / 0.01) if dt is None else dt
    B = 0.0 if drag == "darcy" else 1.75
    y_i = 0.3
    A_t, B_t = case_drag(0.5, 0.1, drag)
    return _column_config(f"case5_{drag}", dim, h, h, y_i + h0, [(y_i, y_i + h0, 0.5, 0.1, B)], (y_i, y_i + h0),
                          dt, t_end, interface=y_i, solver=solver,
                          oracle={"case": "case5", "h0": h0, "theta": 0.5, "A": A_t, "B": B_t})


CASE6_SETS = {
    1: {"theta1": 0.5, "K1": 0.1, "theta2": 0.3, "K2": 0.01, "dt": 1e-3, "t_end": 13.0},
    2: {"theta1": 0.437, "K1": 3.27e-5, "theta2": 0.453, "K2": 3.03e-6, "dt": 1.0, "t_end": 7 * 3600.0},
}


def case6(set_id=1, n=30, dim=2, dt=None, t_end=None, solver="mixed_vms"):
    """Pore column in medium 1 draining into medium 2 below it."""
    s = CASE6_SETS[set_id]
    h0 = 0.3
    h = h0 / n
    y_i = 0.6
    blocks = [(0.0, y_i, s["theta2"], s["K2"], 1.75), (y_i, y_i + h0, s["theta1"], s["K1"], 1.75)]
    A1, B1 = case_drag(s["theta1"], s["K1"], "forchheimer")
    A2, B2 = case_drag(s["theta2"], s["K2"], "forchheimer")
    return _column_config(f"case6_set{set_id}", dim, h, h, y_i + h0, blocks, (y_i, y_i + h0),
                          s["dt"] if dt is None else dt, s["t_end"] if t_end is None else t_end, interface=y_i,
                          solver=solver, oracle={"case": "case6", "h0": h0, "theta1": s["theta1"],
                                                 "theta2": s["theta2"], "A1": A1, "B1": B1, "A2": A2, "B2": B2})


def case_drag(theta, K, drag, rho=1000.0, mu=1e-3):
    """Drag coefficients used by the 1D oracles for a conductivity block."""
    B = 0.0 if drag == "darcy" else 1.75
    A_t, B_t = drag_coefficients(theta, {"K": K, "A": 150.0, "B": B, "theta_ref": theta}, "conductivity", rho, mu, G)
    return float(A_t), float(B_t)


def couette(n=80, nx=4, mu_ratio=1.0, scheme="flip", dt=5e-4, t_end=0.1, ppc=4):
    """Composite channel: moving plate at y = -delta, porous layer above y = 0.

    H = 1 mm, delta = 0.1 H, L = 0.9 H, Re = rho v_b delta / mu = 1.
    """
    H = 1e-3
    h = H / n
    delta, L = 0.1 * H, 0.9 * H
    mu = 1e-3
    v_b = mu / (1000.0 * delta)
    return {
        "scenario": f"couette_mu{mu_ratio:g}_{scheme}",
        "grid": {"origin": [0.0, -delta], "upper": [nx * h, L], "h": h, "periodic": [True, False]},
        "fluid": {"rho": 1000.0, "mu": mu, "gravity": [0.0, 0.0]},
        "fluid_regions": [{"lower": [0.0, -delta], "upper": [nx * h, L]}],
        "ppc": ppc,
        "porous_blocks": [{"lower": [0.0, 0.0], "upper": [nx * h, L], "theta": 0.5, "k": 2.5e-9, "A": 150.0,
                           "B": 1.75, "theta_ref": 0.5, "mu_e": mu_ratio * mu}],
        "boundaries": [{"axis": 1, "side": "low", "type": "moving_plate", "velocity": [v_b, 0.0]},
                       {"axis": 1, "side": "high", "type": "fixed"}],
        "solver": {"type": "mixed_vms", "pressure_pin": [0.0, L]},
        "transfer": {"scheme": scheme},
        "time": {"dt": dt, "t_end": t_end},
        "diagnostics": {"interface": {"axis": 1, "position": 0.0}},
        "oracle": {"case": "couette", "mu_ratio": float(mu_ratio), "H": H, "v_bottom": v_b},
    }


def couette_reference(mu_ratio=1.0):
    from .oracles import CouetteParams
    return CouetteParams(delta_over_H=0.1, L_over_H=0.9, Da_H=2.5e-9 / (0.25 * 1e-6), Re_H=10.0, theta=0.5,
                         A=150.0, B=1.75, gamma_e=float(np.sqrt(mu_ratio)))


def dam_break(h=0.01, ppc=4, dt=1e-3, t_end=0.4):
    """Water column released against a glass-bead porous column."""
    return {
        "scenario": "dam_break",
        "grid": {"origin": [0.0, 0.0], "upper": [0.89, 0.37], "h": h},
        "fluid_regions": [{"lower": [0.0, 0.0], "upper": [0.28, 0.14]}],
        "ppc": ppc,
        "porous_blocks": [{"lower": [0.3, 0.0], "upper": [0.59, 0.37], "theta": 0.39, "d": 0.003, "A": 200.0,
                           "B": 1.1}],
        "boundaries": [{"axis": 0, "side": "low", "type": "slip"}, {"axis": 0, "side": "high", "type": "slip"},
                       {"axis": 1, "side": "low", "type": "slip"}, {"axis": 1, "side": "high", "type": "slip"}],
        "solver": {"pressure_surface_fraction": 0.5},
        "time": {"dt": dt, "t_end": t_end},
    }


SCENARIOS = {"case1": case1, "case3": case3, "case4": case4, "case5": case5, "case6": case6,
             "couette": couette, "dam_break": dam_break}
