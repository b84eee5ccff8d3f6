"""Randomized property suites: comparison principles, penalty bounds, lattice identities.

Each check returns the worst violation it saw (0 when the property holds
exactly); a suite passes when every violation is at most ``TOL_ORD``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .extremal import Branch, OrderInterval, iterate_extremal, make_interval_from_bound
from .fem import TOL_ORD, DiscreteSpace, assemble_space, inf, neg_part, pos_part, sup
from .obstacles import InverseLaplacianObstacle
from .penalty import sigma, sigma_prime
from .solvers import solve_S, solve_T_rho

RHO_PAIR = (1e-3, 1e-1)


@dataclass
class Instance:
    space: DiscreteSpace
    obstacle_map: InverseLaplacianObstacle
    F: np.ndarray
    f: np.ndarray
    g: np.ndarray  # a second admissible source with f <= g
    interval: OrderInterval


@dataclass
class SuiteReport:
    violations: dict = field(default_factory=dict)
    samples: int = 0
    tol: float = TOL_ORD

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.violations.values())

    def record(self, name: str, value: float) -> None:
        self.violations[name] = max(self.violations.get(name, 0.0), float(value))

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "tol": self.tol,
            "passed": self.passed,
            "violations": {k: float(v) for k, v in sorted(self.violations.items())},
        }


def _excess(a, b) -> float:
    """Largest amount by which a exceeds b nodewise."""
    return float(np.max(a - b, initial=0.0))


def _bumps(space, rng, count):
    c = rng.uniform(0.15, 0.85, count)
    w = rng.uniform(0.05, 0.3, count)
    amp = rng.uniform(0.0, 10.0, count)
    x = space.x[:, None]
    return (amp * np.exp(-((x - c) / w) ** 2)).sum(axis=1)


def random_instance(rng: np.random.Generator, n: int = 64) -> Instance:
    """Inverse-Laplacian obstacle with random scale/offset and bump-shaped sources."""
    space = assemble_space(n)
    ob = InverseLaplacianObstacle(space, scale=rng.uniform(0.5, 5.0), offset=rng.uniform(0.05, 0.8))
    upper = rng.uniform(1.0, 15.0) + _bumps(space, rng, 3)
    F = space.load(upper)
    lo = rng.uniform(0.0, 1.0, space.n) * upper
    hi = lo + rng.uniform(0.0, 1.0, space.n) * (upper - lo)
    interval = make_interval_from_bound(space, F, ob)
    return Instance(space, ob, F, space.load(lo), space.load(hi), interval)


def _iterates(space, rho, f, start, ob, count):
    """The first ``count`` iterates of u -> T_rho(f, u) (S for rho = 0)."""
    out, u = [], np.array(start, dtype=float)
    for _ in range(count):
        u = (solve_S(space, f, ob.eval(u)) if rho == 0 else solve_T_rho(space, rho, f, u, ob)).solution
        out.append(u)
    return out


def check_order(inst: Instance, rng: np.random.Generator, report: SuiteReport, n_iter: int = 4) -> None:
    s, ob, I = inst.space, inst.obstacle_map, inst.interval
    f, g = inst.f, inst.g
    rho, kappa = RHO_PAIR
    t = rng.uniform(0.0, 1.0)
    phi = I.sub + t * (I.sup - I.sub)
    psi = phi - rng.uniform(0.0, 0.2, s.n) * (I.sup - I.sub)

    # T_rho increasing in the source and the obstacle argument
    lo = solve_T_rho(s, rho, f, psi, ob).solution
    hi = solve_T_rho(s, rho, g, phi, ob).solution
    report.record("T_rho increasing", _excess(lo, hi))
    lo = solve_S(s, f, ob.eval(psi)).solution
    hi = solve_S(s, g, ob.eval(phi)).solution
    report.record("S increasing", _excess(lo, hi))

    # rho <= kappa gives T_rho <= T_kappa; the VI solution lies below both
    t_rho = solve_T_rho(s, rho, f, phi, ob).solution
    t_kappa = solve_T_rho(s, kappa, f, phi, ob).solution
    report.record("T_rho increasing in rho", _excess(t_rho, t_kappa))
    report.record("S below T_rho", _excess(solve_S(s, f, ob.eval(phi)).solution, t_rho))

    # iterates from sup and sub, ordered in rho, with VI iterates below
    for start, tag in ((I.sup, "sup"), (I.sub, "sub")):
        a = _iterates(s, rho, f, start, ob, n_iter)
        b = _iterates(s, kappa, f, start, ob, n_iter)
        c = _iterates(s, 0.0, f, start, ob, n_iter)
        report.record(f"iterates from {tag} ordered in rho",
                      max(_excess(x, y) for x, y in zip(a, b)))
        report.record(f"VI iterates below penalized ({tag})",
                      max(_excess(z, x) for z, x in zip(c, a)))

    # extremal solutions: ordered in rho, by branch, and by source
    res = {}
    for r in (rho, kappa, 0.0):
        for br in Branch:
            res[r, br] = iterate_extremal(s, r, f, I, br, ob).solution
    for br in Branch:
        report.record(f"{br.value}_rho increasing in rho", _excess(res[rho, br], res[kappa, br]))
        report.record(f"{br.value} below {br.value}_rho", _excess(res[0.0, br], res[rho, br]))
        z_g = iterate_extremal(s, rho, g, I, br, ob).solution
        report.record(f"{br.value}_rho increasing in source", _excess(res[rho, br], z_g))
    for r in (rho, kappa, 0.0):
        report.record("min below max", _excess(res[r, Branch.MIN], res[r, Branch.MAX]))

    # a fixed point reached from a random interior start sits between the branches
    start = I.sub + rng.uniform(0.0, 1.0, s.n) * (I.sup - I.sub)
    u = iterate_extremal(s, rho, f, I, Branch.MIN, ob, start=start).solution
    report.record("interior fixed point within branches",
                  max(_excess(res[rho, Branch.MIN], u), _excess(u, res[rho, Branch.MAX])))


def order_suite(seed: int = 0, count: int = 50, n: int = 64) -> SuiteReport:
    rng = np.random.default_rng(seed)
    report = SuiteReport()
    for _ in range(count):
        check_order(random_instance(rng, n), rng, report)
        report.samples += 1
    return report


def penalty_suite(seed: int = 0, count: int = 10_000) -> SuiteReport:
    """Sandwich 0 <= r+ - sigma <= rho/2, monotonicity in r and in rho, 0 <= sigma' <= 1."""
    rng = np.random.default_rng(seed)
    rho = 10.0 ** rng.uniform(-10, 1, count)
    r = rng.standard_normal(count) * 10.0 ** rng.uniform(-12, 2, count)
    report = SuiteReport(tol=0.0)
    gap = np.array([max(ri, 0.0) - sigma(p, ri) for p, ri in zip(rho, r)])
    report.record("sandwich lower", np.max(-gap, initial=0.0))
    report.record("sandwich upper", np.max(gap - rho / 2, initial=0.0))
    dr = np.abs(rng.standard_normal(count)) * np.maximum(np.abs(r), 1e-12)
    report.record("sigma increasing in r",
                  max(sigma(p, ri) - sigma(p, ri + d) for p, ri, d in zip(rho, r, dr)))
    kappa = rho * 10.0 ** rng.uniform(0, 3, count)
    report.record("sigma decreasing in rho",
                  max(sigma(k, ri) - sigma(p, ri) for p, k, ri in zip(rho, kappa, r)))
    sp_ = np.array([sigma_prime(p, ri) for p, ri in zip(rho, r)])
    report.record("sigma' in [0,1]", max(np.max(-sp_, initial=0.0), np.max(sp_ - 1, initial=0.0)))
    report.samples = count
    return report


def lattice_suite(seed: int = 0, count: int = 200, n: int = 32) -> SuiteReport:
    """v = v+ - v-, inf/sup bracket both arguments, inf + sup = x + y."""
    rng = np.random.default_rng(seed)
    report = SuiteReport(tol=0.0)
    for _ in range(count):
        x, y = rng.standard_normal((2, n))
        report.record("v = v+ - v-", np.max(np.abs(pos_part(x) - neg_part(x) - x)))
        report.record("v+, v- nonnegative", max(np.max(-pos_part(x)), np.max(-neg_part(x)), 0.0))
        lo, hi = inf(x, y), sup(x, y)
        report.record("inf <= args <= sup", max(_excess(lo, x), _excess(lo, y), _excess(x, hi), _excess(y, hi)))
        report.record("inf + sup = x + y", np.max(np.abs((lo + hi) - (x + y))))
    report.samples = count
    return report


def run_all(seed: int = 0, count: int = 50, n: int = 64) -> dict:
    suites = {
        "order": order_suite(seed, count, n),
        "penalty": penalty_suite(seed),
        "lattice": lattice_suite(seed),
    }
    return {name: rep.to_dict() for name, rep in suites.items()}
