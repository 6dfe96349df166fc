"""Error norms and mesh-convergence slopes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ErrorReport:
    e_rms: float = None
    e_inf: float = None
    e_p_i: float = None
    absolute: dict = field(default_factory=dict)  # metric -> True when the normaliser was zero

    def as_dict(self):
        return {"e_RMS_v": self.e_rms, "e_inf_v": self.e_inf, "e_p_i": self.e_p_i, "absolute": dict(self.absolute)}


def _normalised(err, scale, name, report):
    if scale == 0.0:
        report.absolute[name] = True
        return err
    return err / abs(scale)


def error_metrics(v=None, v_ref=None, scale=None, p_i=None, p_i_ref=None) -> ErrorReport:
    """RMS and max velocity errors and the single-point interface-pressure error.

    ``v`` and ``v_ref`` are samples at the same locations (particles for the
    seepage form, nodes for the Couette form).  ``scale`` is the normaliser
    (the analytical seepage velocity or the plate speed); a zero normaliser
    falls back to absolute errors and is flagged in ``absolute``.
    """
    rep = ErrorReport()
    if v is not None:
        diff = np.asarray(v, dtype=float) - np.asarray(v_ref, dtype=float)
        s = float(scale) if scale is not None else 1.0
        rep.e_rms = _normalised(float(np.sqrt(np.mean(diff ** 2))), s, "e_RMS_v", rep)
        rep.e_inf = _normalised(float(np.max(np.abs(diff))), s, "e_inf_v", rep)
    if p_i is not None:
        rep.e_p_i = _normalised(abs(float(p_i) - float(p_i_ref)), float(p_i_ref), "e_p_i", rep)
    return rep


@dataclass
class ConvergenceReport:
    h: np.ndarray
    errors: dict
    slopes: dict
    monotone: dict

    def as_dict(self):
        return {"h": self.h.tolist(), "errors": {k: v.tolist() for k, v in self.errors.items()},
                "slopes": self.slopes, "monotone": self.monotone}


def convergence_slope(h, err):
    """Least-squares slope of log(err) against log(h)."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    if len(h) < 2:
        raise ValueError("need at least two mesh sizes")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def convergence_report(h, errors: dict) -> ConvergenceReport:
    """Slopes per metric; a metric whose error does not fall monotonically
    with h is still fitted but flagged."""
    h = np.asarray(h, dtype=float)
    order = np.argsort(h)
    out, slopes, mono = {}, {}, {}
    for name, e in errors.items():
        e = np.asarray(e, dtype=float)[order]
        out[name] = e
        slopes[name] = convergence_slope(h[order], e)
        mono[name] = bool(np.all(np.diff(e) > 0))
    return ConvergenceReport(h[order], out, slopes, mono)


def convergence_study(build, mesh_list, measure, min_meshes=3) -> ConvergenceReport:
    """Run ``build(n)`` for each mesh parameter and fit the error slopes.

    ``build`` returns ``(h, config)``; ``measure(simulation)`` runs it and
    returns a dict of metric name -> error.
    """
    from .scenarios import Simulation

    if len(mesh_list) < min_meshes:
        raise ValueError(f"a convergence study needs at least {min_meshes} meshes")
    hs, errs = [], {}
    for n in mesh_list:
        h, cfg = build(n)
        sim = Simulation(cfg)
        res = measure(sim)
        hs.append(h)
        for k, v in res.items():
            errs.setdefault(k, []).append(v)
    return convergence_report(hs, errs)


# --- oracle comparison ---------------------------------------------------------

ORACLE_CASES = ("case3", "case4", "case5", "case6", "couette")


def oracle_solution(spec, t_end, g=9.81, rho=1000.0):
    """Column oracle described by a config's ``oracle`` block."""
    from . import oracles

    case = spec["case"]
    if case == "case4":
        return oracles.case4_solve(spec["h0"], spec["theta"], spec["A"], spec["B"], g, t_end, rho)
    if case == "case5":
        return oracles.case5_solve(spec["h0"], spec["theta"], spec["A"], spec["B"], g, max(t_end, 10.0), rho)
    if case == "case6":
        return oracles.case6_solve(spec["h0"], spec["theta1"], spec["theta2"], spec["A1"], spec["B1"], spec["A2"],
                                   spec["B2"], g, t_end, rho)
    raise ValueError(f"no column oracle for {case!r}")


def couette_params(spec):
    from .scenarios import couette_reference

    return couette_reference(spec["mu_ratio"])


def seepage_errors(spec, v_particles, axis=-1, g=9.81) -> ErrorReport:
    """Particle velocity errors against the steady seepage velocity."""
    from .oracles import seepage_steady_state

    v_a = seepage_steady_state(spec["A"], spec["B"], g)
    v = np.asarray(v_particles)[:, axis]
    return error_metrics(v, np.full_like(v, -v_a), scale=v_a)


def couette_errors(spec, y, vx) -> ErrorReport:
    """Horizontal-velocity errors at heights ``y`` against the channel profile."""
    from .oracles import couette_profile

    ref = couette_profile(np.asarray(y) / spec["H"], couette_params(spec)) * spec["v_bottom"]
    return error_metrics(vx, ref, scale=spec["v_bottom"])


def interface_pressure_error(spec, t, p_i, t_end=None) -> ErrorReport:
    """Single-point interface-pressure error at time ``t``."""
    sol = oracle_solution(spec, max(t_end or t, t) + 1.0)
    return error_metrics(p_i=p_i, p_i_ref=float(sol.evaluate(t)["p_i"][0]))
