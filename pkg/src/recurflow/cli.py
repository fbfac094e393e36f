"""Command-line entry point.

Every run reads its parameters from flags (optionally seeded from a JSON
config file; flags override), writes its outputs plus a run manifest into
--out, and is reproducible bit-for-bit from the manifest (wall time
excluded).  JSON carries structured reports, CSV carries series data.
Exit codes: 0 success, 1 domain error (structured JSON on stderr), 2 usage.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .corrector import (CorrectorField, PsiParams, QuadratureConfig,
                        alpha_sweep, measure_ball, radial_moment_check)
from .control import ControlSchedule, ReachResult, ReachSpec, plan_reach, verify_schedule
from .diagnostics import drift_sweep, mean_flux_box, mean_flux_sphere
from .dynamics import (CorrectedField, FlowConfig, flow_map,
                       invariance_residual, pushforward_test)
from .errors import RecurflowError
from .fields import VectorField, divergence_fd, jacobian_fd
from .recurrence import (DiscreteSystem, continuous_return_scan,
                         near_return_search, poincare_discrete_check,
                         poisson_stability_scan)


def _parse_vector(text):
    return np.array([float(v) for v in text.split(",")])


def load_field(token, base_dir="."):
    """Field from a builtin name, 'constant:c1,c2', or a JSON spec path."""
    if token == "shear_sin":
        return VectorField.shear_sin()
    if token == "taylor_green":
        return VectorField.taylor_green()
    if token.startswith("constant:"):
        return VectorField.constant(_parse_vector(token.split(":", 1)[1]))
    path = Path(token)
    if path.suffix == ".json" and path.exists():
        with path.open() as fh:
            spec = json.load(fh)
        if "field" in spec:
            spec = spec["field"]
        return VectorField.from_spec(spec, base_dir=path.parent)
    raise RecurflowError(
        f"unknown field {token!r}: use shear_sin, taylor_green, "
        "constant:c1,c2 or a JSON spec path")


class Runner:
    """Collects outputs and emits the run manifest."""

    def __init__(self, args, command):
        self.args = args
        self.command = command
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs = []
        self.t0 = time.time()

    def write_json(self, name, payload):
        path = self.out / name
        with path.open("w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        self.outputs.append(str(path))
        return path

    def write_csv(self, name, header, rows):
        path = self.out / name
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating))
                                 else v for v in row])
        self.outputs.append(str(path))
        return path

    def finish(self, config_echo):
        manifest = {
            "command": self.command,
            "argv": sys.argv[1:],
            "config": config_echo,
            "seed": getattr(self.args, "seed", None),
            "threads": getattr(self.args, "threads", 1),
            "versions": {"recurflow": __version__,
                         "numpy": np.__version__,
                         "python": sys.version.split()[0]},
            "wall_time_s": time.time() - self.t0,
            "outputs": self.outputs,
        }
        with (self.out / "manifest.json").open("w") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")


def _add_common(sp):
    sp.add_argument("--config", default=None, help="JSON config file; flags override")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=1,
                    help="parallelism cap (results are identical for any N)")
    sp.add_argument("--out", default="runs/latest")


def _apply_config_file(args, parser):
    if getattr(args, "config", None):
        with open(args.config) as fh:
            conf = json.load(fh)
        if "config" in conf and isinstance(conf["config"], dict):
            conf = conf["config"]   # accept a manifest as config
        for key, val in conf.items():
            if hasattr(args, key) and f"--{key.replace('_', '-')}" not in sys.argv \
                    and f"--{key}" not in sys.argv:
                setattr(args, key, val)
    return args


def _echo(args, skip=("config", "out")):
    return {k: v for k, v in vars(args).items()
            if k not in skip and not k.startswith("_") and k != "func"}


# -- subcommand handlers ----------------------------------------------------

def cmd_fields(args):
    run = Runner(args, "fields")
    f = load_field(args.field)
    x = _parse_vector(args.x)
    payload = {"field": f.name, "x": [float(v) for v in x],
               "value": [float(v) for v in f.eval(x)],
               "divergence_fd": float(divergence_fd(f, x, args.h)),
               "jacobian_fd": [[float(v) for v in row]
                               for row in jacobian_fd(f, x, args.h)],
               "sup_bound": f.sup_bound}
    run.write_json("field_eval.json", payload)
    run.finish(_echo(args))
    return 0


def cmd_drift(args):
    run = Runner(args, "drift")
    f = load_field(args.field)
    scales = [float(s) for s in args.scales.split(",")]
    report = drift_sweep(f, scales, quad_n=args.quad_n, seed=args.seed,
                         n_lattice=args.n_lattice, n_random=args.n_random)
    run.write_csv("drift.csv", ["scale", "sup_box_average"], report.rows())
    run.write_json("drift.json", report.to_dict())
    run.finish(_echo(args))
    return 0


def cmd_flux(args):
    run = Runner(args, "flux")
    f = load_field(args.field)
    rows = []
    center = _parse_vector(args.center)
    if args.surface == "box":
        for ell in (float(s) for s in args.scales.split(",")):
            val = mean_flux_box(f, center, args.axis, ell, quad_n=args.quad_n)
            rows.append(("box", ell, val))
    else:
        for R in (float(s) for s in args.scales.split(",")):
            val = mean_flux_sphere(f, center, R, quad_n=args.quad_n)
            rows.append(("sphere", R, val))
    run.write_csv("flux.csv", ["surface", "R", "value"], rows)
    run.finish(_echo(args))
    return 0


def cmd_corrector_eval(args):
    run = Runner(args, "corrector eval")
    f = load_field(args.field)
    x = _parse_vector(args.x)
    quad = QuadratureConfig(tail_tol=args.tail_tol,
                            x_max=max(8.0, float(np.linalg.norm(x)) + 1.0))
    C = CorrectorField(f, PsiParams(args.p, args.alpha, f.dim), quad)
    W, err = C.eval(x, with_error=True)
    payload = {"field": f.name, "x": [float(v) for v in x],
               "alpha": args.alpha, "p": args.p,
               "W": [float(v) for v in W],
               "div_exact": float(C.div_exact(x, W)),
               "err_est": float(err)}
    run.write_json("corrector_eval.json", payload)
    run.finish(_echo(args))
    return 0


def cmd_corrector_sweep(args):
    run = Runner(args, "corrector sweep")
    f = load_field(args.field)
    alphas = [float(a) for a in args.alphas.split(",")]
    g = np.linspace(-args.extent, args.extent, args.grid_n)
    G = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    rows = alpha_sweep(f, args.p, alphas, G)
    run.write_csv("alpha_sweep.csv", ["alpha", "sup_W", "sup_divW", "sup_dW"],
                  [(r["alpha"], r["sup_W"], r["sup_divW"], r["sup_dW"])
                   for r in rows])
    run.finish(_echo(args))
    return 0


def cmd_measure(args):
    run = Runner(args, "measure")
    params = PsiParams(args.p, args.alpha, args.dim)
    payload = {"p": args.p, "alpha": args.alpha, "dim": args.dim, "R": args.R,
               "mu_ball": measure_ball(params, args.R)}
    run.write_json("measure_ball.json", payload)
    run.finish(_echo(args))
    return 0


def cmd_flow(args):
    run = Runner(args, "flow")
    f = load_field(args.field)
    x0 = _parse_vector(args.x0)
    cfg = FlowConfig(step=args.step)
    traj = flow_map(f, x0, args.t, cfg, record=True)
    header = ["t"] + [f"x{i+1}" for i in range(f.dim)]
    rows = [(float(t),) + tuple(float(v) for v in s)
            for t, s in zip(traj.times, traj.states)]
    run.write_csv("flow.csv", header, rows)
    run.finish(_echo(args))
    return 0


def cmd_invariance(args):
    run = Runner(args, "invariance")
    f = load_field(args.field)
    quad = QuadratureConfig(tail_tol=args.tail_tol)
    C = CorrectorField(f, PsiParams(args.p, args.alpha, f.dim), quad)
    g = np.linspace(-args.extent, args.extent, args.grid_n)
    G = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    div, ref = invariance_residual(f, C, G, h=args.h)
    payload = {"field": f.name, "alpha": args.alpha, "p": args.p,
               "grid_n": args.grid_n, "extent": args.extent,
               "max_abs_residual": float(np.abs(div).max()),
               "max_abs_reference": float(np.abs(ref).max()),
               "ratio": float(np.abs(div).max() / max(np.abs(ref).max(), 1e-300))}
    run.write_json("invariance.json", payload)
    run.finish(_echo(args))
    return 0


def cmd_pushforward(args):
    run = Runner(args, "pushforward")
    f = load_field(args.field)
    psi = PsiParams(args.p, args.alpha, f.dim)
    region = ((-args.extent, args.extent), (-args.extent, args.extent))
    if args.no_corrector:
        flow_field = f
    else:
        x_max = CorrectedField.required_x_max(region, args.grid_spacing) + 0.5
        quad = QuadratureConfig(tail_tol=args.tail_tol, x_max=x_max)
        C = CorrectorField(f, psi, quad)
        flow_field = CorrectedField(f, C, region, spacing=args.grid_spacing)
    report = pushforward_test(flow_field, psi, region,
                              n_particles=args.particles, t=args.t,
                              seed=args.seed)
    run.write_json("pushforward.json", report.to_dict())
    run.finish(_echo(args))
    return 0


def cmd_recur_discrete(args):
    run = Runner(args, "recur discrete")
    kind, _, param = args.perm.partition(":")
    if kind == "cycle":
        system = DiscreteSystem.cycle(int(param))
    elif kind == "random":
        system = DiscreteSystem.random_permutation(int(param), args.seed)
    elif kind == "translation":
        system = DiscreteSystem.translation_1d()
    elif kind == "rotation":
        system = DiscreteSystem.rotation_lattice()
    else:
        raise RecurflowError(f"unknown discrete system {args.perm!r}")
    U = [int(v) for v in args.U.split(",")]
    if kind == "rotation":
        U = [(u, 0) for u in U]
    elif kind == "translation":
        U = list(range(U[0], U[0] + args.u_width))
    report = poincare_discrete_check(system, U, args.n_max)
    run.write_json("recur_discrete.json", report.to_dict())
    run.write_csv("return_events.csv", ["n"], [(n,) for n in report.return_events])
    run.finish(_echo(args))
    return 0


def cmd_recur_continuous(args):
    run = Runner(args, "recur continuous")
    f = load_field(args.field)
    center = _parse_vector(args.center)
    psi = None
    flow_field = f
    if not args.no_corrector:
        psi = PsiParams(args.p, args.alpha, f.dim)
        win = ((-args.window, args.window), (-args.window, args.window))
        x_max = CorrectedField.required_x_max(win, args.grid_spacing) + 0.5
        quad = QuadratureConfig(tail_tol=args.tail_tol, x_max=x_max)
        C = CorrectorField(f, psi, quad)
        flow_field = CorrectedField(f, C, win, spacing=args.grid_spacing)
    cfg = FlowConfig(step=args.step)
    report = continuous_return_scan(flow_field, center, args.radius, args.tau,
                                    args.horizon, n_particles=args.particles,
                                    seed=args.seed, cfg=cfg, psi=psi)
    run.write_json("return_scan.json", report.to_dict())
    run.finish(_echo(args))
    return 0


def cmd_recur_poisson(args):
    run = Runner(args, "recur poisson")
    f = load_field(args.field)
    flow_field = f
    win = ((-args.window, args.window), (-args.window, args.window))
    if not args.no_corrector:
        x_max = CorrectedField.required_x_max(win, args.grid_spacing) + 0.5
        quad = QuadratureConfig(tail_tol=args.tail_tol, x_max=x_max)
        C = CorrectorField(f, PsiParams(args.p, args.alpha, f.dim), quad)
        flow_field = CorrectedField(f, C, win, spacing=args.grid_spacing)
    cfg = FlowConfig(step=args.step)
    report = poisson_stability_scan(flow_field, win, grid_n=args.grid_n,
                                    horizon=args.horizon, eps_r=args.eps_r,
                                    cfg=cfg)
    run.write_json("poisson_scan.json", report.to_dict())
    run.finish(_echo(args))
    return 0


def cmd_recur_near_return(args):
    run = Runner(args, "recur near-return")
    f = load_field(args.field)
    x0 = _parse_vector(args.x0)
    cfg = FlowConfig(step=args.step)
    t_star, d_star = near_return_search(f, x0, args.horizon, tau=args.tau, cfg=cfg)
    run.write_json("near_return.json",
                   {"x0": [float(v) for v in x0], "t_star": float(t_star),
                    "distance": float(d_star), "horizon": args.horizon})
    run.finish(_echo(args))
    return 0


def cmd_control_plan(args):
    run = Runner(args, "control plan")
    f = load_field(args.field)
    spec = ReachSpec(x0=_parse_vector(args.x0), y0=_parse_vector(args.y0),
                     delta=args.delta, arrival_tol=args.arrival_tol,
                     horizon=args.horizon, tau=args.tau, step=args.step,
                     window_pad=args.window_pad)
    C = None
    if not args.no_corrector:
        lo, hi = spec.search_window()
        window = ((lo[0] - 1.0, hi[0] + 1.0), (lo[1] - 1.0, hi[1] + 1.0))
        x_max = CorrectedField.required_x_max(window) + 0.5
        quad = QuadratureConfig(tail_tol=args.tail_tol, x_max=x_max)
        C = CorrectorField(f, PsiParams(args.p, args.alpha, f.dim), quad)
    result = plan_reach(f, C, spec)
    run.write_json("reach_result.json", result.to_dict())
    header = ["t"] + [f"x{i+1}" for i in range(f.dim)]
    rows = [(float(t),) + tuple(float(v) for v in s)
            for t, s in zip(result.times, result.states)]
    run.write_csv("trajectory.csv", header, rows)
    verify = verify_schedule(f, result, spec)
    run.write_json("verify.json", verify.to_dict())
    run.finish(_echo(args))
    return 0


def cmd_control_verify(args):
    run = Runner(args, "control verify")
    f = load_field(args.field)
    with open(args.result) as fh:
        stored = json.load(fh)
    sched = ControlSchedule.from_dict(stored["schedule"])
    spec = ReachSpec(x0=_parse_vector(args.x0), y0=_parse_vector(args.y0),
                     delta=args.delta, arrival_tol=args.arrival_tol,
                     step=args.step)
    result = ReachResult(stored["status"], sched, np.array([0.0]),
                         spec.x0[None], stored.get("arrival_error", 0.0),
                         stored.get("expanded_cells", 0), stored.get("budget", {}))
    verify = verify_schedule(f, result, spec)
    run.write_json("verify.json", verify.to_dict())
    run.finish(_echo(args))
    return 0 if verify.passed else 1


# -- parser -------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(
        prog="recurflow",
        description="Corrector fields, recurrence diagnostics and "
                    "small-control navigation for bounded incompressible flows")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("fields", help="evaluate a field and its FD calculus")
    p.add_argument("--field", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--h", type=float, default=1e-4)
    _add_common(p)
    p.set_defaults(func=cmd_fields)

    p = sub.add_parser("drift", help="box-average drift sweep")
    p.add_argument("--field", required=True)
    p.add_argument("--scales", default="10,100")
    p.add_argument("--quad-n", dest="quad_n", type=int, default=32)
    p.add_argument("--n-lattice", dest="n_lattice", type=int, default=3)
    p.add_argument("--n-random", dest="n_random", type=int, default=8)
    _add_common(p)
    p.set_defaults(func=cmd_drift)

    p = sub.add_parser("flux", help="mean flux through boxes or spheres")
    p.add_argument("--field", required=True)
    p.add_argument("--surface", choices=("box", "sphere"), default="sphere")
    p.add_argument("--center", default="0,0")
    p.add_argument("--axis", type=int, default=0)
    p.add_argument("--scales", default="1,2,5")
    p.add_argument("--quad-n", dest="quad_n", type=int, default=64)
    _add_common(p)
    p.set_defaults(func=cmd_flux)

    p = sub.add_parser("corrector", help="corrector evaluation and sweeps")
    csub = p.add_subparsers(dest="action", required=True)

    pe = csub.add_parser("eval")
    pe.add_argument("--field", required=True)
    pe.add_argument("--x", required=True)
    pe.add_argument("--alpha", type=float, default=1.0)
    pe.add_argument("--p", type=float, default=0.75)
    pe.add_argument("--tail-tol", dest="tail_tol", type=float, default=2e-3)
    _add_common(pe)
    pe.set_defaults(func=cmd_corrector_eval)

    ps = csub.add_parser("sweep")
    ps.add_argument("--field", required=True)
    ps.add_argument("--alphas", default="1,2,4,8,16")
    ps.add_argument("--p", type=float, default=0.75)
    ps.add_argument("--extent", type=float, default=5.0)
    ps.add_argument("--grid-n", dest="grid_n", type=int, default=11)
    _add_common(ps)
    ps.set_defaults(func=cmd_corrector_sweep)

    p = sub.add_parser("measure", help="weighted ball measure mu(B_R)")
    p.add_argument("--p", type=float, default=0.75)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--R", type=float, default=10.0)
    _add_common(p)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("flow", help="integrate a trajectory")
    p.add_argument("--field", required=True)
    p.add_argument("--x0", required=True)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--step", type=float, default=1e-2)
    _add_common(p)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("invariance", help="weighted divergence residual")
    p.add_argument("--field", required=True)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--p", type=float, default=0.75)
    p.add_argument("--extent", type=float, default=5.0)
    p.add_argument("--grid-n", dest="grid_n", type=int, default=21)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--tail-tol", dest="tail_tol", type=float, default=2e-3)
    _add_common(p)
    p.set_defaults(func=cmd_invariance)

    p = sub.add_parser("pushforward", help="Monte-Carlo invariance check")
    p.add_argument("--field", required=True)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--p", type=float, default=0.75)
    p.add_argument("--extent", type=float, default=5.0)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--particles", type=int, default=20000)
    p.add_argument("--no-corrector", dest="no_corrector", action="store_true")
    p.add_argument("--grid-spacing", dest="grid_spacing", type=float, default=0.25)
    p.add_argument("--tail-tol", dest="tail_tol", type=float, default=2e-3)
    _add_common(p)
    p.set_defaults(func=cmd_pushforward)

    p = sub.add_parser("recur", help="recurrence scans")
    rsub = p.add_subparsers(dest="action", required=True)

    rd = rsub.add_parser("discrete")
    rd.add_argument("--perm", default="cycle:12",
                    help="cycle:N | random:N | translation | rotation")
    rd.add_argument("--U", default="0")
    rd.add_argument("--u-width", dest="u_width", type=int, default=10)
    rd.add_argument("--n-max", dest="n_max", type=int, default=100)
    _add_common(rd)
    rd.set_defaults(func=cmd_recur_discrete)

    rc = rsub.add_parser("continuous")
    rc.add_argument("--field", required=True)
    rc.add_argument("--center", default="1.5707963,0")
    rc.add_argument("--radius", type=float, default=0.5)
    rc.add_argument("--tau", type=float, default=1.0)
    rc.add_argument("--horizon", type=float, default=1000.0)
    rc.add_argument("--particles", type=int, default=1000)
    rc.add_argument("--alpha", type=float, default=2.0)
    rc.add_argument("--p", type=float, default=0.75)
    rc.add_argument("--window", type=float, default=40.0)
    rc.add_argument("--grid-spacing", dest="grid_spacing", type=float, default=0.25)
    rc.add_argument("--step", type=float, default=0.02)
    rc.add_argument("--no-corrector", dest="no_corrector", action="store_true")
    rc.add_argument("--tail-tol", dest="tail_tol", type=float, default=8e-3)
    _add_common(rc)
    rc.set_defaults(func=cmd_recur_continuous)

    rp = rsub.add_parser("poisson")
    rp.add_argument("--field", required=True)
    rp.add_argument("--window", type=float, default=5.0)
    rp.add_argument("--grid-n", dest="grid_n", type=int, default=11)
    rp.add_argument("--horizon", type=float, default=100.0)
    rp.add_argument("--eps-r", dest="eps_r", type=float, default=0.1)
    rp.add_argument("--alpha", type=float, default=2.0)
    rp.add_argument("--p", type=float, default=0.75)
    rp.add_argument("--grid-spacing", dest="grid_spacing", type=float, default=0.25)
    rp.add_argument("--step", type=float, default=0.02)
    rp.add_argument("--no-corrector", dest="no_corrector", action="store_true")
    rp.add_argument("--tail-tol", dest="tail_tol", type=float, default=8e-3)
    _add_common(rp)
    rp.set_defaults(func=cmd_recur_poisson)

    rn = rsub.add_parser("near-return")
    rn.add_argument("--field", required=True)
    rn.add_argument("--x0", required=True)
    rn.add_argument("--horizon", type=float, default=10.0)
    rn.add_argument("--tau", type=float, default=0.5)
    rn.add_argument("--step", type=float, default=0.01)
    _add_common(rn)
    rn.set_defaults(func=cmd_recur_near_return)

    p = sub.add_parser("control", help="plan and verify reach schedules")
    ksub = p.add_subparsers(dest="action", required=True)

    kp = ksub.add_parser("plan")
    kp.add_argument("--field", required=True)
    kp.add_argument("--x0", required=True)
    kp.add_argument("--y0", required=True)
    kp.add_argument("--delta", type=float, default=0.3)
    kp.add_argument("--arrival-tol", dest="arrival_tol", type=float, default=0.1)
    kp.add_argument("--horizon", type=float, default=2000.0)
    kp.add_argument("--tau", type=float, default=1.0)
    kp.add_argument("--step", type=float, default=0.02)
    kp.add_argument("--window-pad", dest="window_pad", type=float, default=8.0)
    kp.add_argument("--alpha", type=float, default=2.0)
    kp.add_argument("--p", type=float, default=0.75)
    kp.add_argument("--no-corrector", dest="no_corrector", action="store_true")
    kp.add_argument("--tail-tol", dest="tail_tol", type=float, default=8e-3)
    _add_common(kp)
    kp.set_defaults(func=cmd_control_plan)

    kv = ksub.add_parser("verify")
    kv.add_argument("--field", required=True)
    kv.add_argument("--result", required=True, help="reach_result.json path")
    kv.add_argument("--x0", required=True)
    kv.add_argument("--y0", required=True)
    kv.add_argument("--delta", type=float, default=0.3)
    kv.add_argument("--arrival-tol", dest="arrival_tol", type=float, default=0.1)
    kv.add_argument("--step", type=float, default=0.02)
    _add_common(kv)
    kv.set_defaults(func=cmd_control_verify)

    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args = _apply_config_file(args, parser)
    try:
        return args.func(args)
    except RecurflowError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
