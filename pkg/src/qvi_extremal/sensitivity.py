"""Directional derivatives of the extremal maps Z_rho and Z."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, ConvergenceError
from .extremal import Branch, OrderInterval, iterate_extremal
from .fem import TOL_ORD, DiscreteSpace, DualField, Field, dual_norm, v_norm
from .obstacles import ObstacleMap
from .penalty import sigma_prime_diag
from .solvers import pdas

TOL_ACT = 1e-7
TOL_MULT = 1e-7
TOL_STEP = 1e-10
TOL_RES = 1e-9
FD_STEPS = (1e-2, 1e-3, 1e-4, 1e-5)


@dataclass
class CriticalConeSpec:
    strongly_active: np.ndarray
    biactive: np.ndarray
    inactive: np.ndarray
    shift: Field

    def __post_init__(self):
        total = self.strongly_active.astype(int) + self.biactive + self.inactive
        if not np.all(total == 1):
            raise ValueError("cone index sets must partition the nodes")

    def contains(self, w: Field, tol: float = TOL_ORD) -> bool:
        on_sa = np.all(np.abs(w - self.shift)[self.strongly_active] <= tol)
        on_ba = np.all((w - self.shift)[self.biactive] <= tol)
        return bool(on_sa and on_ba)

    def to_dict(self) -> dict:
        return {
            "strongly_active": int(self.strongly_active.sum()),
            "biactive": int(self.biactive.sum()),
            "inactive": int(self.inactive.sum()),
        }


@dataclass
class DerivativeResult:
    direction: DualField
    alpha: Field
    fixed_point_iters: int
    residual: float
    fd_errors: list = field(default_factory=list)
    cone: CriticalConeSpec | None = None
    multiplier: DualField | None = None

    def to_dict(self) -> dict:
        out = {
            "fixed_point_iters": int(self.fixed_point_iters),
            "residual": float(self.residual),
            "fd_errors": [[float(s), float(e)] for s, e in self.fd_errors],
        }
        if self.cone is not None:
            out["cone"] = self.cone.to_dict()
            out["ties_broken_toward_inactive"] = int(self.cone.biactive.sum())
        return out


def _non_contraction(space, u, obstacle_map, diffs, what):
    try:
        c_l = obstacle_map.deriv_norm(u)
    except (MemoryError, np.linalg.LinAlgError):
        c_l = float("nan")
    return ConvergenceError(
        f"{what} iteration is not contracting (differences {diffs[-3:]}); "
        f"|Phi'(u)|_V estimate {c_l:.3f}",
        diffs,
    )


def _growing(diffs) -> bool:
    # five consecutive increases, or a blow-up relative to the first step
    if len(diffs) > 5 and all(b > a for a, b in zip(diffs[-6:], diffs[-5:])):
        return True
    return len(diffs) > 2 and diffs[-1] > 1e3 * max(diffs[0], 1e-300)


def penalized_derivative_matrix(space, rho, u, obstacle_map):
    """(K + D/rho, D/rho) with D = sigma_prime_diag(u - Phi(u))."""
    ob = obstacle_map.eval(u)
    D = sigma_prime_diag(space, rho, u - ob) / rho
    return sp.csc_matrix(space.stiffness + D), D


def deriv_Z_rho(space: DiscreteSpace, rho: float, f: DualField, u: Field, d: DualField,
                obstacle_map: ObstacleMap, max_iter: int = 1000) -> DerivativeResult:
    """alpha with K alpha + (1/rho) D (alpha - Phi'(u) alpha) = d.

    Solved by the contraction alpha_n = (K + D/rho)^{-1}(d + (D/rho) Phi'(u) alpha_{n-1}).
    """
    if not rho > 0:
        raise ConfigurationError("rho must be positive")
    d = np.asarray(d, dtype=float)
    A, D = penalized_derivative_matrix(space, rho, u, obstacle_map)
    lu = spla.splu(A)
    active = D.diagonal() > 0

    def residual(alpha):
        r = space.stiffness @ alpha + D @ (alpha - obstacle_map.deriv(u, alpha)) - d
        return dual_norm(space, r)

    alpha = np.zeros(space.n)
    shift = np.zeros(space.n)
    diffs = []
    for it in range(1, max_iter + 1):
        new = lu.solve(d + D @ shift)
        diffs.append(v_norm(space, new - alpha))
        alpha = new
        new_shift = obstacle_map.deriv(u, alpha) if active.any() else shift
        exact = np.array_equal(D @ new_shift, D @ shift)
        shift = new_shift
        if exact or diffs[-1] <= TOL_STEP:
            res = residual(alpha)
            if res <= TOL_RES:
                return DerivativeResult(d, alpha, it, res)
        if _growing(diffs):
            raise _non_contraction(space, u, obstacle_map, diffs, "linearized penalty")
    raise ConvergenceError(f"derivative iteration did not converge in {max_iter} steps", diffs)


def critical_cone(space, u, xi, obstacle_map, shift, tol_act=TOL_ACT, tol_mult=TOL_MULT) -> CriticalConeSpec:
    gap = obstacle_map.eval(u) - u
    contact = np.abs(gap) <= tol_act
    strong = contact & (xi > tol_mult)
    bi = contact & ~strong
    return CriticalConeSpec(strong, bi, ~contact, shift)


def derivative_vi_residual(space, alpha, mu, d, cone: CriticalConeSpec) -> float:
    """Violation of the VI on the shifted critical cone, in the dual norm where possible."""
    eq = dual_norm(space, space.stiffness @ alpha + mu - d)
    w = alpha - cone.shift
    feas = max(np.max(np.abs(w[cone.strongly_active]), initial=0.0),
               np.max(np.maximum(w[cone.biactive], 0.0), initial=0.0))
    sign = np.max(np.maximum(-mu[cone.biactive], 0.0), initial=0.0)
    comp = np.max(np.abs(mu[cone.biactive] * w[cone.biactive]), initial=0.0)
    free = np.max(np.abs(mu[cone.inactive]), initial=0.0)
    return float(max(eq, feas, sign, comp, free))


def deriv_Z(space: DiscreteSpace, f: DualField, u: Field, xi: DualField, d: DualField,
            obstacle_map: ObstacleMap, max_iter: int = 1000, tol_act: float = TOL_ACT,
            tol_mult: float = TOL_MULT) -> DerivativeResult:
    """Derivative of the QVI solution map: the VI on the critical cone shifted by Phi'(u)alpha.

    Outer fixed point over the shift, inner PDAS with equality on strongly
    active nodes and inequality on biactive nodes.
    """
    d = np.asarray(d, dtype=float)
    base = critical_cone(space, u, xi, obstacle_map, np.zeros(space.n), tol_act, tol_mult)
    eq, ineq = base.strongly_active, base.biactive
    alpha = np.zeros(space.n)
    shift = np.zeros(space.n)
    constrained = eq | ineq
    diffs = []
    for it in range(1, max_iter + 1):
        new, mu, _, _ = pdas(space.stiffness, d, shift, eq_mask=eq, ineq_mask=ineq)
        diffs.append(v_norm(space, new - alpha))
        alpha = new
        new_shift = obstacle_map.deriv(u, alpha) if constrained.any() else shift
        exact = np.array_equal(new_shift[constrained], shift[constrained])
        shift = new_shift
        if exact or diffs[-1] <= TOL_STEP:
            cone = CriticalConeSpec(eq, ineq, base.inactive, shift)
            res = derivative_vi_residual(space, alpha, mu, d, cone)
            if res <= TOL_RES:
                return DerivativeResult(d, alpha, it, res, cone=cone, multiplier=mu)
        if _growing(diffs):
            raise _non_contraction(space, u, obstacle_map, diffs, "derivative QVI")
    raise ConvergenceError(f"derivative QVI iteration did not converge in {max_iter} steps", diffs)


def derivative(space, rho, f, base, d, obstacle_map) -> DerivativeResult:
    """Dispatch on rho: deriv_Z_rho for rho > 0, deriv_Z for rho = 0."""
    if rho > 0:
        return deriv_Z_rho(space, rho, f, base.solution, d, obstacle_map)
    return deriv_Z(space, f, base.solution, base.xi, d, obstacle_map)


def fd_sweep(space, rho, f, d, alpha, interval: OrderInterval, branch, obstacle_map,
             steps=FD_STEPS, tol_fp: float = 1e-13, base: Field | None = None, directions=None):
    """Errors |(Z(f + s d_s) - Z(f))/s - alpha|_V over the step sizes.

    ``directions`` optionally gives one direction per step (Hadamard sweep);
    ``alpha`` may then be a list of matching reference derivatives.
    """
    branch = Branch(branch)
    kw = dict(tol_fp=tol_fp, newton_tol=0.0)
    if base is None:
        base = iterate_extremal(space, rho, f, interval, branch, obstacle_map, **kw).solution
    out = []
    for k, s in enumerate(steps):
        dk = d if directions is None else directions[k]
        g = f + s * dk
        if not interval.admissible(g):
            raise ConfigurationError(f"f + s d leaves the admissible set at s = {s:g}")
        z = iterate_extremal(space, rho, g, interval, branch, obstacle_map, **kw).solution
        ref = alpha[k] if isinstance(alpha, (list, tuple)) else alpha
        out.append((float(s), v_norm(space, (z - base) / s - ref)))
    return out


def fd_converges(fd_errors, factor: float = 0.6, floor: float = 1e-7) -> bool:
    """error(s/10) <= factor * error(s) until the floor is reached."""
    errs = [e for _, e in fd_errors]
    for a, b in zip(errs, errs[1:]):
        if a <= floor:
            break
        if b > factor * a and b > floor:
            return False
    return True


def hadamard_check(space, rho, f, d, d_seq, s_seq, interval, branch, obstacle_map,
                   base=None, tol_fp: float = 1e-13) -> dict:
    """Compare quotient errors along d_k -> d with the fixed-direction run.

    Passes if, at every s_k, the perturbed error is at most 10% above the
    fixed-direction error plus the derivative shift |alpha(d_k) - alpha(d)|_V
    (plus a 1e-7 solver floor), and the perturbed errors tend to zero.
    """
    branch = Branch(branch)
    for s, dk in zip(s_seq, d_seq):
        if not interval.admissible(f + s * dk):
            raise ConfigurationError("perturbed direction leaves the admissible set")
    if base is None:
        base = iterate_extremal(space, rho, f, interval, branch, obstacle_map,
                                tol_fp=tol_fp, newton_tol=0.0)
    alpha = derivative(space, rho, f, base, d, obstacle_map).alpha
    fixed = fd_sweep(space, rho, f, d, alpha, interval, branch, obstacle_map, s_seq, tol_fp,
                     base=base.solution)
    moved = fd_sweep(space, rho, f, d, alpha, interval, branch, obstacle_map, s_seq, tol_fp,
                     base=base.solution, directions=list(d_seq))
    shifts = [v_norm(space, derivative(space, rho, f, base, dk, obstacle_map).alpha - alpha)
              for dk in d_seq]
    ok = all(em <= 1.1 * (ef + sh) + 1e-7 for (_, ef), (_, em), sh in zip(fixed, moved, shifts))
    return {
        "fixed": fixed,
        "perturbed": moved,
        "direction_shift": shifts,
        "passed": bool(ok and moved[-1][1] < moved[0][1]),
    }
