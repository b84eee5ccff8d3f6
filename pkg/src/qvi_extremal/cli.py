"""Command-line drivers.

Every command writes ``<out>/<command>.json`` (schema ``qvi-extremal/1``)
plus CSV side files, prints the JSON, and exits with

* 0 when every asserted check passes,
* 1 when a check fails,
* 2 on a configuration error,
* 3 when a solver fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, build_obstacle, build_space, load_config, parse_source
from .control import ControlProblem, bouligand_residual, certify_stationarity, optimize
from .errors import ConfigurationError, NumericalError, SolverError
from .extremal import (Branch, errors_nonincreasing, iterate_extremal, lipschitz_probe,
                       make_interval_from_bound, rho_continuation)
from .fem import h_norm, order_leq, v_norm
from .io import SCHEMA, dumps, write_csv, write_field_csv, write_json
from .obstacles import ThermoformingObstacle, thermo_lipschitz_radius
from .properties import run_all
from .sensitivity import FD_STEPS, TOL_RES, derivative, fd_converges, fd_sweep
from .solvers import TOL_COMP, solve_S, solve_T_rho

log = logging.getLogger("qvi_extremal")

EXERCISES = {
    "solve-vi": "obstacle problem with a fixed obstacle, primal-dual active set method",
    "solve-pen": "Moreau-Yosida penalized equation with a fixed obstacle, damped Newton",
    "extremal": "monotone fixed-point iteration for the minimal or maximal QVI solution",
    "rho-sweep": "penalized extremal solutions approaching the QVI solution as rho decreases",
    "diff-check": "directional derivative of the extremal solution map against finite differences",
    "lipschitz-probe": "Lipschitz continuity of the extremal solution map in the source term",
    "control": "optimal control constrained by extremal QVI solutions, projected gradient",
    "certify": "C-stationarity system and Bouligand stationarity at a computed control",
    "thermoform": "thermoforming model with explicit solutions 0 (minimal) and sin(pi x) (maximal)",
    "proptest": "comparison principles, penalty bounds and lattice identities on random instances",
}


def _setup(cfg: RunConfig):
    space = build_space(cfg)
    ob = build_obstacle(cfg, space)
    return space, ob


def _interval(cfg, space, ob):
    return make_interval_from_bound(space, cfg.load("bound", space), ob, rho0=cfg.rho0)


# -- commands: each returns (results, checks) --------------------------------------

def cmd_solve_vi(cfg: RunConfig, out: Path):
    s, ob = _setup(cfg)
    f = cfg.load("source", s)
    rep = solve_S(s, f, ob.eval(np.zeros(s.n)), c=cfg.pdas_c)
    write_field_csv(out / "solve-vi_solution.csv", s.x, rep.solution)
    res = rep.to_dict() | {"v_norm": v_norm(s, rep.solution)}
    return res, {"vi_residual": rep.final_residual <= TOL_COMP}


def cmd_solve_pen(cfg: RunConfig, out: Path):
    s, ob = _setup(cfg)
    f = cfg.load("source", s)
    rho = cfg.rho if cfg.rho > 0 else cfg.rho0
    phi = np.zeros(s.n)
    rep = solve_T_rho(s, rho, f, phi, ob)
    vi = solve_S(s, f, ob.eval(phi), c=cfg.pdas_c).solution
    write_field_csv(out / "solve-pen_solution.csv", s.x, rep.solution)
    res = rep.to_dict() | {"rho": rho, "v_norm": v_norm(s, rep.solution),
                           "distance_to_vi": v_norm(s, rep.solution - vi)}
    return res, {"vi_solution_below": order_leq(vi, rep.solution)}


def cmd_extremal(cfg: RunConfig, out: Path):
    s, ob = _setup(cfg)
    I = _interval(cfg, s, ob)
    r = iterate_extremal(s, cfg.rho, cfg.load("source", s), I, cfg.branch, ob, cfg.tol_fp, cfg.max_n)
    write_field_csv(out / "extremal_solution.csv", s.x, r.solution)
    write_csv(out / "extremal_history.csv", ["iter", "difference"], r.iterate_history)
    res = r.to_dict() | {"v_norm": v_norm(s, r.solution), "certificates": I.certificates}
    return res, {"monotone": r.monotone, "fixed_point_residual": r.fixed_point_residual <= cfg.tol_fp}


def cmd_rho_sweep(cfg: RunConfig, out: Path):
    s, ob = _setup(cfg)
    I = _interval(cfg, s, ob)
    f = cfg.load("source", s)
    ref = iterate_extremal(s, 0.0, f, I, cfg.branch, ob, cfg.tol_fp, cfg.max_n).solution
    results, errors = rho_continuation(s, f, I, cfg.branch, ob, cfg.rho_schedule, cfg.tol_fp, cfg.max_n,
                                       reference=ref)
    write_csv(out / "rho-sweep.csv", ["rho", "error_v"], zip(cfg.rho_schedule, errors))
    res = {"branch": cfg.branch, "rho": cfg.rho_schedule, "errors": errors,
           "iterations": [r.iterations for r in results]}
    return res, {"errors_nonincreasing": errors_nonincreasing(errors)}


def cmd_diff_check(cfg: RunConfig, out: Path):
    s, ob = _setup(cfg)
    I = _interval(cfg, s, ob)
    f = cfg.load("source", s)
    d = cfg.load("direction", s)
    base = iterate_extremal(s, cfg.rho, f, I, cfg.branch, ob, tol_fp=1e-13, max_n=cfg.max_n, newton_tol=0.0)
    der = derivative(s, cfg.rho, f, base, d, ob)
    errs = fd_sweep(s, cfg.rho, f, d, der.alpha, I, cfg.branch, ob, FD_STEPS, base=base.solution)
    write_csv(out / "diff-check.csv", ["s", "error_v"], errs)
    write_field_csv(out / "diff-check_derivative.csv", s.x, der.alpha)
    der.fd_errors = errs
    res = der.to_dict() | {"rho": cfg.rho, "branch": cfg.branch}
    return res, {"residual": der.residual <= TOL_RES, "fd_converges": fd_converges(errs)}


def _perturbations(cfg, space, f_nodal, F_nodal, rng):
    out = []
    for _ in range(cfg.perturbations):
        g = f_nodal + cfg.perturbation_size * F_nodal * rng.uniform(-1.0, 1.0, space.n)
        g = np.clip(g, 0.0, F_nodal)
        out.append(space.load(g) - space.load(f_nodal))
    return out


def cmd_lipschitz_probe(cfg: RunConfig, out: Path):
    s, ob = _setup(cfg)
    I = _interval(cfg, s, ob)
    rng = np.random.default_rng(cfg.seed)
    f_nodal, F_nodal = cfg.nodal("source", s), cfg.nodal("bound", s)
    deltas = _perturbations(cfg, s, f_nodal, F_nodal, rng)
    rho = cfg.rho
    rep = lipschitz_probe(s, s.load(f_nodal), deltas, rho, I, cfg.branch, ob, tol_fp=cfg.tol_fp)
    checks = {"within_bound": not rep["violation"]}
    if cfg.obstacle == "constant":
        checks["vi_nonexpansive"] = rep["max_ratio"] <= 1.0 / s.c_a + 1e-8
    if isinstance(ob, ThermoformingObstacle):
        rep["certified_radius"] = thermo_lipschitz_radius()[0]
    write_csv(out / "lipschitz-probe.csv", ["sample", "ratio"], enumerate(rep["ratios"]))
    return rep, checks


def _control_problem(cfg, s, ob):
    I = _interval(cfg, s, ob)
    return ControlProblem(s, ob, I, cfg.a, cfg.b, cfg.nodal("y_d", s), cfg.nu,
                          cfg.nodal("u_a", s), cfg.nodal("u_b", s))


def _run_control(cfg, prob, out):
    s = prob.space
    f, traj = optimize(prob, cfg.control_schedule, cfg.nodal("f0", s), tol_kkt=cfg.tol_kkt,
                       max_iter=cfg.max_iter)
    write_csv(out / "control_trajectory.csv", ["iter", "value", "kkt_residual", "rho"],
              [(r["iter"], r["value"], r["kkt_residual"], r["rho"]) for r in traj])
    write_field_csv(out / "control_f_star.csv", s.x, f)
    return f, traj


def cmd_control(cfg: RunConfig, out: Path):
    s, ob = _setup(cfg)
    prob = _control_problem(cfg, s, ob)
    f, traj = _run_control(cfg, prob, out)
    grad_checks = [r["grad_check"] for r in traj if "grad_check" in r]
    res = {"iterations": traj[-1]["iter"], "value": traj[-1]["value"],
           "kkt_residual": traj[-1]["kkt_residual"], "rho_schedule": list(cfg.control_schedule),
           "gradient_check_first": grad_checks[0] if grad_checks else None}
    return res, {"kkt_residual": traj[-1]["kkt_residual"] <= cfg.tol_kkt}


def cmd_certify(cfg: RunConfig, out: Path):
    s, ob = _setup(cfg)
    prob = _control_problem(cfg, s, ob)
    if cfg.f_star:
        f = s.interpolate(parse_source(cfg.f_star, cfg.base_dir))
    else:
        f, _ = _run_control(cfg, prob, out)
    rho = float(cfg.control_schedule[-1])
    cert = certify_stationarity(prob, f, rho)
    bs = bouligand_residual(prob, f, count=50, seed=cfg.seed)
    res = cert.to_dict() | {"rho": rho, "bouligand_min": bs["min"]}
    checks = dict(cert.checks) | {"bouligand": bs["min"] >= -1e-6}
    return res, checks


def cmd_thermoform(cfg: RunConfig, out: Path):
    s = build_space(cfg)
    ob = ThermoformingObstacle(s, k=cfg.k)
    F = s.load(lambda x: np.pi**2 * np.sin(np.pi * x))
    I = make_interval_from_bound(s, F, ob, rho0=cfg.rho0)
    lo = iterate_extremal(s, 0.0, F, I, Branch.MIN, ob, cfg.tol_fp, cfg.max_n)
    hi = iterate_extremal(s, 0.0, F, I, Branch.MAX, ob, cfg.tol_fp, cfg.max_n)
    exact = np.sin(np.pi * s.x)
    write_field_csv(out / "thermoform_min.csv", s.x, lo.solution)
    write_field_csv(out / "thermoform_max.csv", s.x, hi.solution)
    res = {
        "n": s.n,
        "min_v_norm": v_norm(s, lo.solution),
        "max_l2_error": h_norm(s, hi.solution - exact),
        "max_v_norm": v_norm(s, hi.solution),
        "sup_l2_error": h_norm(s, I.sup - exact),
        "iterations": {"min": lo.iterations, "max": hi.iterations},
    }
    checks = {"min_is_zero": res["min_v_norm"] <= 1e-8, "max_is_sin": res["max_l2_error"] <= 1e-3}
    return res, checks


def cmd_proptest(cfg: RunConfig, out: Path):
    res = run_all(cfg.seed, cfg.proptest_count, cfg.n)
    return res, {name: suite["passed"] for name, suite in res.items()}


COMMANDS = {
    "solve-vi": cmd_solve_vi,
    "solve-pen": cmd_solve_pen,
    "extremal": cmd_extremal,
    "rho-sweep": cmd_rho_sweep,
    "diff-check": cmd_diff_check,
    "lipschitz-probe": cmd_lipschitz_probe,
    "control": cmd_control,
    "certify": cmd_certify,
    "thermoform": cmd_thermoform,
    "proptest": cmd_proptest,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with run settings")
    common.add_argument("--n", type=int, help="number of interior nodes")
    common.add_argument("--rho0", type=float, help="first penalty parameter of the schedule")
    common.add_argument("--rho-steps", type=int, dest="rho_steps", help="length of the rho schedule")
    common.add_argument("--branch", choices=("min", "max"))
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(
        prog="qvi-extremal",
        description="Minimal and maximal solutions of 1D obstacle-type QVIs: solvers, derivatives, control.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=EXERCISES[name])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    summary = {"schema": SCHEMA, "command": args.command, "exercises": EXERCISES[args.command]}
    out = Path(args.out or "out")
    try:
        cfg = load_config(args.config, n=args.n, rho0=args.rho0, rho_steps=args.rho_steps,
                          branch=args.branch, out=args.out, seed=args.seed)
        out = Path(cfg.out)
        summary["config"] = cfg.to_dict()
        t0 = time.perf_counter()
        results, checks = COMMANDS[args.command](cfg, out)
        log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
    except ConfigurationError as exc:
        summary |= {"status": "config_error", "error": str(exc), "passed": False}
        code = 2
    except (SolverError, NumericalError) as exc:
        summary |= {"status": "solver_error", "error": f"{type(exc).__name__}: {exc}", "passed": False}
        code = 3
    else:
        passed = all(bool(v) for v in checks.values())
        summary |= {"status": "ok" if passed else "check_failed", "results": results,
                    "checks": {k: bool(v) for k, v in checks.items()}, "passed": passed}
        code = 0 if passed else 1
    try:
        write_json(out / f"{args.command}.json", summary)
    except OSError as exc:
        log.error("could not write summary: %s", exc)
    sys.stdout.write(dumps(summary))
    return code


if __name__ == "__main__":
    sys.exit(main())
