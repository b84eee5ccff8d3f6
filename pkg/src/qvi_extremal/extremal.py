"""Monotone fixed-point iterations for the minimal and maximal solutions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError, ConvergenceError
from .fem import TOL_ORD, DiscreteSpace, DualField, Field, dual_norm, v_norm
from .obstacles import ObstacleMap
from .solvers import SolveReport, contraction_constants, solve_S, solve_T_rho

log = logging.getLogger(__name__)

TOL_FP = 1e-9
MARGINAL = 1e-8


class Branch(str, Enum):
    MIN = "min"
    MAX = "max"


@dataclass
class OrderInterval:
    sub: Field
    sup: Field
    bound: DualField | None = None
    rho0: float = 1.0
    certificates: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(self.sub <= self.sup + TOL_ORD):
            raise ConfigurationError("sub must lie below sup")

    def admissible(self, g: DualField, tol: float = TOL_ORD) -> bool:
        """Membership of g in W = {0 <= g <= F}, checked on load vectors."""
        if self.bound is None:
            return True
        return bool(np.all(g >= -tol) and np.all(g <= self.bound + tol))


@dataclass
class ExtremalResult:
    branch: Branch
    solution: Field
    rho: float
    iterate_history: list
    fixed_point_residual: float
    monotone: bool
    last_report: SolveReport | None = None

    @property
    def xi(self) -> DualField:
        return self.last_report.xi

    @property
    def iterations(self) -> int:
        return len(self.iterate_history)

    def to_dict(self) -> dict:
        return {
            "branch": self.branch.value,
            "rho": float(self.rho),
            "iterations": self.iterations,
            "fixed_point_residual": float(self.fixed_point_residual),
            "monotone": bool(self.monotone),
            "history": [[int(k), float(d)] for k, d in self.iterate_history],
        }


def solve_map(space, rho, f, u, obstacle_map, warm_start=None, newton_tol=None) -> SolveReport:
    """One step of the fixed-point map: S(f, u) for rho = 0, else T_rho(f, u)."""
    if rho == 0:
        return solve_S(space, f, obstacle_map.eval(u))
    return solve_T_rho(space, rho, f, u, obstacle_map, warm_start=warm_start, tol=newton_tol)


def check_certificates(space: DiscreteSpace, interval: OrderInterval, g: DualField,
                       obstacle_map: ObstacleMap) -> dict:
    """Violations of sub <= S(g, sub) and sup >= T_rho0(g, sup) (0 means satisfied)."""
    s_sub = solve_S(space, g, obstacle_map.eval(interval.sub)).solution
    t_sup = solve_T_rho(space, interval.rho0, g, interval.sup, obstacle_map).solution
    return {
        "sub": float(np.max(interval.sub - s_sub, initial=0.0)),
        "sup": float(np.max(t_sup - interval.sup, initial=0.0)),
    }


def make_interval_from_bound(space: DiscreteSpace, F: DualField, obstacle_map: ObstacleMap,
                             rho0: float = 1.0, check: bool = True) -> OrderInterval:
    """sub = 0, sup = K^{-1} F for the admissible sources W = {0 <= g <= F}.

    Certificates are checked at g = 0 and g = F; monotonicity of S and
    T_rho in the source covers every g in between.
    """
    F = np.asarray(F, dtype=float)
    if np.any(F < -TOL_ORD):
        raise ConfigurationError("bound F must be nonnegative")
    interval = OrderInterval(np.zeros(space.n), space.solve_stiffness(F), F.copy(), rho0)
    if check:
        worst = {"sub": 0.0, "sup": 0.0}
        for g in (np.zeros(space.n), F):
            c = check_certificates(space, interval, g, obstacle_map)
            worst = {k: max(worst[k], c[k]) for k in worst}
        interval.certificates = worst
        for name, viol in worst.items():
            ineq = "sub <= S(g, sub)" if name == "sub" else "sup >= T_rho0(g, sup)"
            if viol > MARGINAL:
                raise ConfigurationError(f"certificate {ineq} violated by {viol:.3e}")
            if viol > TOL_ORD:
                log.warning("certificate %s violated marginally (%.2e)", ineq, viol)
    return interval


def iterate_extremal(space: DiscreteSpace, rho: float, f: DualField, interval: OrderInterval,
                     branch: Branch | str, obstacle_map: ObstacleMap, tol_fp: float = TOL_FP,
                     max_n: int = 200, start: Field | None = None,
                     newton_tol: float | None = None) -> ExtremalResult:
    """u^n = T_rho(f, u^{n-1}) (S for rho = 0) from sup (MAX) or sub (MIN).

    Stops once ``|u^n - u^{n-1}|_V <= tol_fp`` and the next step confirms
    the fixed-point residual.  ``start`` overrides the initial iterate.
    """
    branch = Branch(branch)
    if rho < 0:
        raise ConfigurationError("rho must be nonnegative")
    u = np.array(interval.sup if branch is Branch.MAX else interval.sub, dtype=float)
    if start is not None:
        u = np.array(start, dtype=float)
    sign = -1.0 if branch is Branch.MAX else 1.0
    history, monotone = [], True
    report = last = None
    converged_at = None
    for k in range(1, max_n + 1):
        report = solve_map(space, rho, f, u, obstacle_map,
                           warm_start=report.solution if report is not None else None,
                           newton_tol=newton_tol)
        u_new = report.solution
        d = v_norm(space, u_new - u)
        history.append((k, d))
        if np.any(sign * (u_new - u) < -TOL_ORD):
            monotone = False
        if converged_at is not None and d <= tol_fp:
            return ExtremalResult(branch, u, rho, history, d, monotone, last)
        converged_at = k if d <= tol_fp else None
        last = report
        u = u_new
    diffs = np.array([d for _, d in history[-6:]])
    rate = float(np.exp(np.mean(np.diff(np.log(np.maximum(diffs, 1e-300)))))) if diffs.size > 1 else np.nan
    more = np.log(tol_fp / diffs[-1]) / np.log(rate) if 0 < rate < 1 else np.inf
    raise ConvergenceError(
        f"{branch.value} iteration did not reach {tol_fp:g} in {max_n} steps "
        f"(last difference {diffs[-1]:.3e}, rate estimate {rate:.3f}, ~{more:.0f} more steps)",
        history,
    )


def rho_continuation(space, f, interval, branch, obstacle_map, rho_schedule, tol_fp=TOL_FP,
                     max_n=200, reference: Field | None = None, newton_tol=None):
    """Extremal solutions along a decreasing rho schedule.

    The MAX branch restarts from the previous M_rho, which is a valid
    supersolution for smaller rho; the MIN branch restarts from sub.
    Returns ``(results, errors)`` where errors are V-distances to
    ``reference`` (the rho = 0 solution, computed if not given).
    """
    branch = Branch(branch)
    sched = [float(r) for r in rho_schedule]
    if any(r <= 0 for r in sched) or any(b >= a for a, b in zip(sched, sched[1:])):
        raise ConfigurationError("rho schedule must be positive and strictly decreasing")
    if reference is None:
        reference = iterate_extremal(space, 0.0, f, interval, branch, obstacle_map, tol_fp, max_n).solution
    results, errors = [], []
    start = None
    for rho in sched:
        res = iterate_extremal(space, rho, f, interval, branch, obstacle_map, tol_fp, max_n,
                               start=start, newton_tol=newton_tol)
        results.append(res)
        errors.append(v_norm(space, res.solution - reference))
        if branch is Branch.MAX:
            start = res.solution
    return results, errors


def errors_nonincreasing(errors, slack: float = 0.1) -> bool:
    """Nonincreasing up to a 10% slack on the last entry."""
    e = np.asarray(errors)
    if e.size < 2:
        return True
    body = np.all(np.diff(e[:-1]) <= 1e-12 * (1 + e[:-2])) if e.size > 2 else True
    return bool(body and e[-1] <= (1 + slack) * e[-2] + 1e-12)


def lipschitz_probe(space, f, perturbations, rho, interval, branch, obstacle_map, c_l=None,
                    tol_fp=TOL_FP) -> dict:
    """Empirical |Z(f)-Z(g)|_V / |f-g|_V* over admissible g = f + delta."""
    branch = Branch(branch)
    if not interval.admissible(f):
        raise ConfigurationError("base source is not admissible")
    z_f = iterate_extremal(space, rho, f, interval, branch, obstacle_map, tol_fp).solution
    ratios, dists = [], []
    for delta in perturbations:
        g = f + delta
        if not interval.admissible(g):
            raise ConfigurationError("perturbed source leaves the admissible set")
        nd = dual_norm(space, delta)
        if nd == 0:
            continue
        z_g = iterate_extremal(space, rho, g, interval, branch, obstacle_map, tol_fp).solution
        dz = v_norm(space, z_g - z_f)
        ratios.append(dz / nd)
        dists.append(v_norm(space, z_g))
    if c_l is None:
        radius = max([v_norm(space, z_f)] + dists)
        c_l = obstacle_map.lipschitz_estimate(z_f, radius)
    consts = contraction_constants(space.c_a, space.c_b, c_l, space.self_adjoint)
    max_ratio = max(ratios) if ratios else float("nan")
    return {
        "branch": branch.value,
        "rho": float(rho),
        "ratios": [float(r) for r in ratios],
        "max_ratio": float(max_ratio),
        "c_l": float(c_l),
        "bound": consts["bound"],
        "constants": consts,
        "violation": bool(ratios and max_ratio > consts["bound"]),
    }
