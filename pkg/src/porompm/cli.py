"""Command-line entry point: simulate, oracle, convergence, metrics."""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import oracles
from .errors import PoroMPMError
from .metrics import (ORACLE_CASES, convergence_report, couette_errors, couette_params, interface_pressure_error,
                      oracle_solution, seepage_errors)
from .scenarios import SCENARIOS, Simulation, load_config, resolve_config, run_scenario

log = logging.getLogger("porompm")


def _config_from_arg(arg):
    """A YAML path, or the name of a canonical scenario."""
    if arg in SCENARIOS:
        return SCENARIOS[arg]()
    return load_config(arg)


def _parse_params(items):
    out = {}
    for item in items:
        if "=" not in item:
            raise SystemExit(f"parameter {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k] = yaml.safe_load(v)
    return out


def _write_csv(rows, header, out):
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{x + 0.0:.12g}" for x in r])
    finally:
        if out:
            fh.close()


# --- subcommands ---------------------------------------------------------------

def cmd_simulate(args):
    cfg = _config_from_arg(args.config)
    solver = {"mixed": "mixed_vms", "fractional": "fractional_step"}.get(args.solver, args.solver)
    try:
        _, summary = run_scenario(cfg, args.out, solver=solver, scheme=args.scheme)
    except PoroMPMError as exc:
        log.error("run failed: %s", exc)
        return 1
    print(json.dumps(summary, indent=2))
    return 0


def _column_defaults(case):
    if case == "case6":
        s = {"h0": 0.3, "theta1": 0.5, "K1": 0.1, "theta2": 0.3, "K2": 0.01, "drag": "forchheimer", "t_end": 13.0}
    else:
        s = {"h0": 0.3, "theta": 0.5, "K": 0.1, "drag": "darcy", "t_end": 2.0 if case == "case4" else 1.0}
    s["dt"] = 1e-3
    return s


def cmd_oracle(args):
    from .scenarios import case_drag

    p = _parse_params(args.params)
    case = args.case
    if case == "couette":
        prm = couette_params({"mu_ratio": p.pop("mu_ratio", 1.0)})
        for k, v in p.items():
            if k in ("n", "y_min", "y_max"):
                continue
            setattr(prm, k, v)
        n = int(p.get("n", 201))
        y = np.linspace(p.get("y_min", -prm.delta_over_H), p.get("y_max", prm.L_over_H), n)
        v = oracles.couette_profile(y, prm)
        _write_csv(zip(y, v), ["y_norm", "v_norm"], args.out)
        return 0
    if case == "case3":
        s = {"theta": 0.5, "K": 0.1, "drag": "darcy", "t_end": 0.5, "dt": 1e-3, **p}
        A, B = case_drag(s["theta"], s["K"], s["drag"])
        t = np.arange(0.0, s["t_end"] + 0.5 * s["dt"], s["dt"])
        v = oracles.case3_velocity(t, A, B)
        _write_csv(zip(t, v), ["t", "v"], args.out)
        return 0
    if case not in ("case4", "case5", "case6"):
        raise SystemExit(f"unknown oracle case {case!r}; expected one of {ORACLE_CASES}")
    s = {**_column_defaults(case), **p}
    if case == "case6":
        A1, B1 = case_drag(s["theta1"], s["K1"], s["drag"])
        A2, B2 = case_drag(s["theta2"], s["K2"], s["drag"])
        spec = {"case": case, "h0": s["h0"], "theta1": s["theta1"], "theta2": s["theta2"], "A1": A1, "B1": B1,
                "A2": A2, "B2": B2}
        names = ("h_1", "h_2", "p_i")
    else:
        A, B = case_drag(s["theta"], s["K"], s["drag"])
        spec = {"case": case, "h0": s["h0"], "theta": s["theta"], "A": A, "B": B}
        names = ("h_ff", "h_fp", "p_i")
    sol = oracle_solution(spec, s["t_end"])
    t = np.arange(0.0, s["t_end"] + 0.5 * s["dt"], s["dt"])
    ev = sol.evaluate(t)
    _write_csv(zip(t, *(ev[k] for k in names)), ["t", *names], args.out)
    if sol.t_star is not None:
        log.info("t* = %.6f s", sol.t_star)
    return 0


def _measure(sim, spec, at):
    """Run ``sim`` to time ``at`` and return its errors against ``spec``."""
    sim.run(t_end=at)
    case = spec["case"]
    if case == "case3":
        rep = seepage_errors(spec, sim.particles.v, axis=sim.axis)
        return {"e_RMS_v": rep.e_rms, "e_inf_v": rep.e_inf}
    if case == "couette":
        sol = sim.last_solution
        act = sol["active"]
        y = sim.grid.node_positions()[act, 1]
        rep = couette_errors(spec, y, sol["v"][act, 0])
        return {"e_RMS_v": rep.e_rms, "e_inf_v": rep.e_inf}
    rep = interface_pressure_error(spec, sim.t, sim.records[-1]["p_i"])
    return {"e_p_i": rep.e_p_i}


def cmd_convergence(args):
    cfg = resolve_config(_config_from_arg(args.config))
    spec = cfg.get("oracle")
    if not spec:
        raise SystemExit("config has no oracle block to compare against")
    hs = [float(h) for h in args.meshes.split(",")]
    if len(hs) < 3:
        raise SystemExit("a convergence study needs at least three mesh sizes")
    at = args.time if args.time is not None else cfg["time"]["t_end"]
    h0, dt0 = cfg["grid"]["h"], cfg["time"]["dt"]
    errors = {}
    for h in hs:
        c = copy.deepcopy(cfg)
        c["grid"]["h"] = h
        c["time"]["dt"] = dt0 * h / h0
        if len(c["grid"]["origin"]) > 1 and spec["case"] in ("case4", "case5", "case6"):
            c["grid"]["upper"][0] = h
            for r in c["fluid_regions"] + c["porous_blocks"]:
                r["upper"][0] = h
        res = _measure(Simulation(c), spec, at)
        log.info("h = %g: %s", h, res)
        for k, v in res.items():
            errors.setdefault(k, []).append(v)
    rep = convergence_report(hs, errors)
    print(json.dumps(rep.as_dict(), indent=2))
    return 0


def _read_timeseries(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {k: np.atleast_1d(data[k]) for k in data.dtype.names}


def cmd_metrics(args):
    run = Path(args.run_dir)
    cfg = yaml.safe_load((run / "config.resolved.yaml").read_text())
    spec = dict(cfg.get("oracle") or {})
    if args.oracle and spec.get("case") != args.oracle:
        raise SystemExit(f"run was configured against {spec.get('case')!r}, not {args.oracle!r}")
    ts = _read_timeseries(run / "timeseries.csv")
    case = spec.get("case")
    out = {"case": case}
    if case in ("case4", "case5", "case6"):
        t = float(args.time) if args.time is not None else float(ts["t"][-1])
        i = int(np.argmin(np.abs(ts["t"] - t)))
        out.update(interface_pressure_error(spec, ts["t"][i], ts["p_i"][i]).as_dict())
        sol = oracle_solution(spec, float(ts["t"][-1]) + 1.0)
        ref = sol.evaluate(ts["t"])
        peak = float(np.max(np.abs(ref["p_i"])))
        out["p_i_max_deviation_over_peak"] = float(np.max(np.abs(ts["p_i"] - ref["p_i"])) / peak) if peak else None
    elif case in ("case3", "couette"):
        parts = np.genfromtxt(run / "particles_final.csv", delimiter=",", names=True)
        dim = len(cfg["grid"]["origin"])
        axes = "xyz"[:dim]
        if case == "case3":
            v = np.stack([parts[f"v{a}"] for a in axes], axis=1)
            out.update(seepage_errors(spec, v).as_dict())
        else:
            out.update(couette_errors(spec, parts["y"], parts["vx"]).as_dict())
    else:
        raise SystemExit("run has no oracle block; choose a canonical scenario")
    print(json.dumps(out, indent=2))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="porompm", description="Mixed MPM for free-surface and seepage flow")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write its artifacts")
    s.add_argument("config", help="YAML config or canonical scenario name")
    s.add_argument("--solver", choices=["mixed", "fractional", "mixed_vms", "fractional_step"])
    s.add_argument("--scheme", choices=["flip", "apic", "tpic"])
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", help="write a reference solution as CSV")
    o.add_argument("case", choices=ORACLE_CASES)
    o.add_argument("params", nargs="*", help="key=value overrides (e.g. theta=0.5 K=0.1 drag=forchheimer)")
    o.add_argument("--out", help="CSV path (default stdout)")
    o.set_defaults(func=cmd_oracle)

    c = sub.add_parser("convergence", help="mesh-refinement study against the config's oracle")
    c.add_argument("config")
    c.add_argument("--meshes", required=True, help="comma-separated cell sizes h")
    c.add_argument("--time", type=float, help="evaluation time (default t_end)")
    c.set_defaults(func=cmd_convergence)

    m = sub.add_parser("metrics", help="error metrics of a finished run")
    m.add_argument("run_dir")
    m.add_argument("--oracle", choices=ORACLE_CASES)
    m.add_argument("--time", type=float, help="evaluation time for the interface pressure")
    m.set_defaults(func=cmd_metrics)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
