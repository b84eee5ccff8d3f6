"""Solution maps for a fixed obstacle: the VI map S and the penalized map T_rho."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, SolverError
from .fem import DiscreteSpace, DualField, Field
from .obstacles import ObstacleMap
from .penalty import sigma_field, sigma_prime, sigma_prime_diag, sigma_primitive

TOL_COMP = 1e-9
EPS = np.finfo(float).eps


@dataclass
class SolveReport:
    solution: Field
    iterations: int
    final_residual: float
    xi: DualField
    active_set: np.ndarray
    obstacle: Field | None = None
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": int(self.iterations),
            "final_residual": float(self.final_residual),
            "active_set": [int(i) for i in self.active_set],
            "history": [float(v) for v in self.history],
        }


# -- primal-dual active set ------------------------------------------------------

def pdas(K, f, upper, eq_mask=None, ineq_mask=None, c: float = 1.0, max_iter: int | None = None):
    """Solve ``Ku + xi = f`` with

    * ``u = upper`` on ``eq_mask`` (xi free),
    * ``u <= upper, xi >= 0, xi (upper - u) = 0`` on ``ineq_mask``,
    * ``xi = 0`` elsewhere.

    Returns ``(u, xi, active, iterations)``.  Ties in the active-set rule
    ``xi + c (u - upper) > 0``, i.e. values within rounding of zero, count
    as inactive.  A repeated active set is accepted only if the iterate
    already satisfies the complementarity system to rounding accuracy.
    """
    K = sp.csr_matrix(K)
    n = K.shape[0]
    f = np.asarray(f, dtype=float)
    upper = np.asarray(upper, dtype=float)
    eq = np.zeros(n, bool) if eq_mask is None else np.asarray(eq_mask, bool)
    ineq = np.ones(n, bool) if ineq_mask is None else np.asarray(ineq_mask, bool)
    ineq = ineq & ~eq
    max_iter = max_iter or 2 * n + 20

    u = spla.splu(sp.csc_matrix(K)).solve(f)
    # indicator values within rounding of zero are ties
    tie = 64 * EPS * (np.max(np.abs(f), initial=0.0) + _row_norm(K) * np.max(np.abs(upper), initial=0.0))
    active = eq | (ineq & (u - upper > 0))
    seen = []
    for it in range(1, max_iter + 1):
        u, xi = _reduced_solve(K, f, upper, active)
        new_active = eq | (ineq & (xi + c * (u - upper) > tie))
        if np.array_equal(new_active, active):
            return u, xi, active, it
        key = new_active.tobytes()
        if key in seen:
            if _kkt_ok(u, xi, upper, active, ineq, tie):
                return u, xi, active, it
            raise SolverError("active-set iteration is cycling", history=np.flatnonzero(new_active).tolist())
        seen.append(key)
        active = new_active
    raise SolverError("active-set iteration hit max_iter", history=np.flatnonzero(active).tolist())


def _row_norm(K) -> float:
    return float(abs(K).sum(axis=1).max()) if K.shape[0] else 0.0


def _kkt_ok(u, xi, upper, active, ineq, tol) -> bool:
    on = active & ineq
    return bool(np.all(u[ineq] <= upper[ineq] + tol) and np.all(xi[on] >= -tol))


def _reduced_solve(K, f, upper, active):
    n = K.shape[0]
    u = np.where(active, upper, 0.0)
    free = ~active
    if free.any():
        Kff = sp.csc_matrix(K[free][:, free])
        rhs = f[free] - K[free][:, active] @ upper[active]
        u[free] = spla.splu(Kff).solve(rhs)
    xi = f - K @ u
    xi[free] = 0.0
    return u, xi


def solve_S(space: DiscreteSpace, f: DualField, obstacle: Field, c: float = 1.0,
            max_iter: int | None = None) -> SolveReport:
    """Obstacle VI ``u <= obstacle``: Ku + xi = f, xi >= 0, complementarity."""
    obstacle = np.asarray(obstacle, dtype=float)
    if not np.all(np.isfinite(obstacle)):
        raise ConfigurationError("obstacle must be finite")
    f = np.asarray(f, dtype=float)
    u, xi, active, its = pdas(space.stiffness, f, obstacle, c=c, max_iter=max_iter)
    res = vi_residual(space, f, u, xi, obstacle)
    return SolveReport(u, its, res, xi, np.flatnonzero(active), obstacle)


def vi_residual(space: DiscreteSpace, f, u, xi, obstacle) -> float:
    """Largest violation among equation, sign, feasibility and complementarity."""
    eq = np.max(np.abs(space.stiffness @ u + xi - f), initial=0.0)
    sign = np.max(np.maximum(-xi, 0.0), initial=0.0)
    feas = np.max(np.maximum(u - obstacle, 0.0), initial=0.0)
    comp = np.max(np.abs(xi * (obstacle - u)), initial=0.0)
    return float(max(eq, sign, feas, comp))


# -- penalized equation ------------------------------------------------------

def newton_tolerance(f: DualField) -> float:
    return 1e-11 * (1.0 + np.max(np.abs(f), initial=0.0))


def _rounding_floor(space, rho, u, ob, f) -> np.ndarray:
    """Nodewise size of the residual that one ulp in u or Phi can produce.

    The penalty term moves by M_L sigma'(u - Phi)/rho per unit change of
    u - Phi, so nodes in the quadratic band contribute far less than nodes on
    the linear branch.
    """
    u_abs = np.abs(u)
    slope = sigma_prime(rho, u - ob)
    scale = (abs(space.stiffness) @ u_abs + space.mass_lumped * slope / rho * np.maximum(u_abs, np.abs(ob))
             + np.abs(f))
    return 8 * EPS * scale


def _within(F, tol, floor) -> bool:
    return bool(np.all(np.abs(F) <= np.maximum(tol, floor)))


def penalized_residual(space, rho, f, u, ob) -> DualField:
    return space.stiffness @ u + sigma_field(space, rho, u - ob) / rho - f


def _energy(space, rho, f, u, ob) -> float:
    return float(0.5 * u @ (space.stiffness @ u)
                 + np.sum(space.mass_lumped * sigma_primitive(rho, u - ob)) / rho - f @ u)


def solve_T_rho(space: DiscreteSpace, rho: float, f: DualField, phi: Field, obstacle_map: ObstacleMap,
                warm_start: Field | None = None, max_iter: int = 100,
                obstacle_value: Field | None = None, tol: float | None = None) -> SolveReport:
    """Damped Newton for ``Ku + (1/rho) M_L sigma_rho(u - Phi(phi)) = f``.

    ``tol`` overrides the default stopping tolerance on the residual; it
    never goes below the rounding floor of the residual evaluation.  If
    Newton stalls first, the default tolerance is what must be met.
    """
    if not rho > 0:
        raise ConfigurationError(f"rho must be positive, got {rho}")
    f = np.asarray(f, dtype=float)
    ob = obstacle_map.eval(phi) if obstacle_value is None else np.asarray(obstacle_value, float)
    if warm_start is not None:
        u = np.array(warm_start, dtype=float)
    else:
        u = np.minimum(space.solve_stiffness(f), ob)

    tol = newton_tolerance(f) if tol is None else tol
    F = penalized_residual(space, rho, f, u, ob)
    history = [float(np.max(np.abs(F)))]
    it = 0
    stalled = False
    while True:
        fn = np.max(np.abs(F))
        if _within(F, tol, _rounding_floor(space, rho, u, ob, f)):
            break
        if it >= max_iter:
            raise SolverError(f"Newton did not converge in {max_iter} steps, residual {fn:.3e}", history)
        it += 1
        J = space.stiffness + sigma_prime_diag(space, rho, u - ob) / rho
        du = spla.splu(sp.csc_matrix(J)).solve(-F)
        u_new, F_new = _line_search(space, rho, f, u, ob, du, F)
        if u_new is None:
            raise SolverError(f"line search failed, residual {fn:.3e}", history)
        stalled = np.max(np.abs(u_new - u)) <= 4 * EPS * (1.0 + np.max(np.abs(u)))
        u, F = u_new, F_new
        history.append(float(np.max(np.abs(F))))
        if stalled:
            break
    fn = float(np.max(np.abs(F)))
    # after a stall, a tolerance tighter than the default is only a target
    required = max(tol, newton_tolerance(f)) if stalled else tol
    if not _within(F, required, _rounding_floor(space, rho, u, ob, f)):
        raise SolverError(f"Newton stalled at residual {fn:.3e}", history)
    xi = sigma_field(space, rho, u - ob) / rho
    return SolveReport(u, it, fn, xi, np.flatnonzero(u - ob > 0), ob, history)


def _line_search(space, rho, f, u, ob, du, F):
    nF = np.linalg.norm(F)
    t = 1.0
    for _ in range(40):
        u_t = u + t * du
        F_t = penalized_residual(space, rho, f, u_t, ob)
        if np.linalg.norm(F_t) <= (1 - 1e-4 * t) * nF:
            return u_t, F_t
        t *= 0.5
    # fall back to the convex energy, for which du is a descent direction
    E0 = _energy(space, rho, f, u, ob)
    slope = F @ du
    if slope >= 0:
        return None, None
    t = 1.0
    for _ in range(40):
        u_t = u + t * du
        if _energy(space, rho, f, u_t, ob) <= E0 + 1e-4 * t * slope:
            return u_t, penalized_residual(space, rho, f, u_t, ob)
        t *= 0.5
    return None, None


# -- Lipschitz bookkeeping -----------------------------------------------------

def contraction_constants(c_a: float, c_b: float, c_l: float, self_adjoint: bool = True) -> dict:
    """Constants (C_hat, c_hat) with |T(f,phi)-T(g,psi)| <= C_hat|f-g| + c_hat|phi-psi|.

    ``bound`` is C_hat/(1-c_hat), the Lipschitz constant of the fixed-point
    map f -> Z(f); it is inf if c_l is too large for the contraction argument.
    """
    if c_l < c_a / c_b:
        C = c_a / 2
        c_t = c_b * c_l / c_a
        ratio = c_a / c_b  # C_L / c_tilde
        case = "small"
    elif self_adjoint and c_l < 2 * np.sqrt(c_b / c_a) / (1 + c_b / c_a):
        C = c_a * c_b / (c_a + c_b)
        c_t = (c_a + c_b) * c_l / (2 * np.sqrt(c_a * c_b))
        ratio = 2 * np.sqrt(c_a * c_b) / (c_a + c_b)
        case = "self_adjoint"
    else:
        return {"case": "none", "C": float("nan"), "c_tilde": float("nan"),
                "C_hat": float("inf"), "c_hat": 1.0, "bound": float("inf")}
    X = 1 / np.sqrt(2 * C * (1 - c_t**2)) + ratio / (2 * np.sqrt(C))
    C_hat = np.sqrt(2 / (C * (1 + c_t**2))) * X
    c_hat = c_t * np.sqrt(2 / (1 + c_t**2))
    return {"case": case, "C": float(C), "c_tilde": float(c_t), "C_hat": float(C_hat),
            "c_hat": float(c_hat), "bound": float(C_hat / (1 - c_hat))}


def first_estimate(c_a: float, c_b: float, df_dual: float, dobs_v: float) -> float:
    """Bound on |T(f,phi)-T(g,psi)|_V from the source and obstacle differences."""
    return np.sqrt(2) / c_a * df_dual + np.sqrt(2) * c_b / c_a * dobs_v
