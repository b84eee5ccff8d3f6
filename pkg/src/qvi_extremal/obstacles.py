"""Obstacle maps u -> Phi(u) together with their derivatives."""

from __future__ import annotations

import threading
from collections import OrderedDict

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError
from .fem import DiscreteSpace, Field

PI = np.pi


class ObstacleMap:
    """Increasing map Phi on nodal fields.

    Subclasses implement ``eval`` and ``deriv``; ``deriv_matrix`` assembles
    Phi'(u) column by column when the derivative is linear.
    """

    kind = "abstract"
    deriv_is_linear = True

    def __init__(self, space: DiscreteSpace):
        self.space = space

    def eval(self, u: Field) -> Field:
        raise NotImplementedError

    def deriv(self, u: Field, h: Field) -> Field:
        raise NotImplementedError

    def deriv_matrix(self, u: Field) -> np.ndarray:
        n = self.space.n
        G = np.empty((n, n))
        e = np.zeros(n)
        for j in range(n):
            e[j] = 1.0
            G[:, j] = self.deriv(u, e)
            e[j] = 0.0
        return G

    def deriv_norm(self, u: Field) -> float:
        """Operator norm of Phi'(u) on V (H^1_0 seminorm)."""
        R = _laplacian_cholesky(self.space)
        G = self.deriv_matrix(u)
        B = R @ G @ sla.solve_triangular(R, np.eye(self.space.n), lower=False)
        return float(np.linalg.norm(B, 2))

    def lipschitz_estimate(self, center: Field, radius: float, n_samples: int = 8, seed: int = 0) -> float:
        """Sampled estimate of the Lipschitz constant of Phi on a V-ball.

        Takes the largest derivative norm over the center and random points
        in the ball and inflates it by 10%.  Not a certified bound.
        """
        rng = np.random.default_rng(seed)
        best = self.deriv_norm(center)
        if radius > 0:
            for _ in range(n_samples):
                w = random_v_direction(self.space, rng)
                best = max(best, self.deriv_norm(center + radius * rng.uniform(0.5, 1.0) * w))
        return 1.1 * best

    def describe(self) -> dict:
        return {"kind": self.kind}


_CHOL_CACHE: dict[int, np.ndarray] = {}
_CHOL_LOCK = threading.Lock()


def _laplacian_cholesky(space: DiscreteSpace) -> np.ndarray:
    with _CHOL_LOCK:
        R = _CHOL_CACHE.get(space.n)
        if R is None:
            R = sla.cholesky(space.laplacian.toarray(), lower=False)
            _CHOL_CACHE[space.n] = R
        return R


def random_v_direction(space: DiscreteSpace, rng: np.random.Generator) -> Field:
    """Random field with unit V-norm (smooth-ish: sum of a few sine modes)."""
    k = np.arange(1, 9)
    coeffs = rng.standard_normal(k.size) / k
    w = np.sin(PI * np.outer(space.x, k)) @ coeffs
    w = w + 0.05 * rng.standard_normal(space.n) * space.h
    return w / np.sqrt(w @ (space.laplacian @ w))


class ConstantObstacle(ObstacleMap):
    kind = "constant"

    def __init__(self, space: DiscreteSpace, psi: Field):
        super().__init__(space)
        self.psi = np.asarray(psi, dtype=float).copy()
        self.psi.setflags(write=False)

    def eval(self, u: Field) -> Field:
        return self.psi.copy()

    def deriv(self, u: Field, h: Field) -> Field:
        return np.zeros(self.space.n)

    def deriv_matrix(self, u: Field) -> np.ndarray:
        return np.zeros((self.space.n, self.space.n))

    def deriv_norm(self, u: Field) -> float:
        return 0.0

    def lipschitz_estimate(self, center, radius, n_samples=8, seed=0) -> float:
        return 0.0


class InverseLaplacianObstacle(ObstacleMap):
    """Phi(w) = scale * L^{-1} M w + offset, i.e. -phi'' = scale * w.

    The defaults ``scale=1``, ``offset=0`` give the plain solution operator
    of the Dirichlet Laplacian.  A nonnegative offset keeps Phi(0) >= 0.
    """

    kind = "inverse_laplacian"

    def __init__(self, space: DiscreteSpace, scale: float = 1.0, offset: Field | float | None = None):
        super().__init__(space)
        if scale < 0:
            raise ValueError("scale must be nonnegative to keep the map increasing")
        self.scale = float(scale)
        off = np.zeros(space.n) if offset is None else np.asarray(offset, dtype=float) * np.ones(space.n)
        self.offset = off
        self._norm = None

    def eval(self, u: Field) -> Field:
        return self.scale * self.space.riesz_inverse(self.space.mass @ u) + self.offset

    def deriv(self, u: Field, h: Field) -> Field:
        return self.scale * self.space.riesz_inverse(self.space.mass @ h)

    def deriv_matrix(self, u: Field) -> np.ndarray:
        return self.scale * self.space._lu_lap.solve(self.space.mass.toarray())

    def deriv_norm(self, u: Field) -> float:
        # L^{-1}M is self-adjoint in the V inner product
        if self._norm is None:
            lam = spla.eigsh(self.space.mass, k=1, M=self.space.laplacian, which="LA",
                             return_eigenvectors=False)
            self._norm = self.scale * float(lam[0])
        return self._norm

    def lipschitz_estimate(self, center, radius, n_samples=8, seed=0) -> float:
        return self.deriv_norm(center)

    def describe(self) -> dict:
        return {"kind": self.kind, "scale": self.scale, "offset_max": float(np.max(self.offset))}


def thermo_g(s):
    return 4.0 * np.minimum(0.0, s) ** 2


def thermo_g_prime(s):
    return 8.0 * np.minimum(0.0, s)


class ThermoformingObstacle(ObstacleMap):
    """Mould displacement phi*T, T the membrane temperature.

    T solves ``k T - T'' = g(psi T - u)`` with homogeneous Neumann data on a
    P1 space that includes both boundary nodes; the nonlinearity uses the
    lumped mass.
    """

    kind = "thermoforming"

    def __init__(self, space: DiscreteSpace, k: float = PI**2, tol: float = 1e-10, max_iter: int = 60):
        super().__init__(space)
        n, h = space.n, space.h
        self.k = float(k)
        self.tol = tol
        self.max_iter = max_iter
        self.x_full = h * np.arange(n + 2)
        denom = 5.0 - np.cos(2 * PI * self.x_full)
        self.varphi = 10 * PI**2 * np.sin(PI * self.x_full) / denom
        self.psi_weight = 5 * PI**2 * np.sin(PI * self.x_full) / denom
        self.varphi[[0, -1]] = 0.0
        self.psi_weight[[0, -1]] = 0.0
        m = np.full(n + 2, h)
        m[[0, -1]] = h / 2
        self.mass_lumped = m
        main = np.full(n + 2, 2.0 / h)
        main[[0, -1]] = 1.0 / h
        off = np.full(n + 1, -1.0 / h)
        self.neumann_stiffness = sp.diags([off, main, off], [-1, 0, 1], format="csc")
        self._base = self.neumann_stiffness + sp.diags(self.k * m)
        self._cache: OrderedDict[bytes, np.ndarray] = OrderedDict()
        self._lock = threading.Lock()

    # -- temperature solve -------------------------------------------------
    def _extend(self, u: Field) -> np.ndarray:
        return np.concatenate(([0.0], np.asarray(u, dtype=float), [0.0]))

    def _residual(self, T, u_ext):
        return self._base @ T - self.mass_lumped * thermo_g(self.psi_weight * T - u_ext)

    def _jacobian(self, T, u_ext):
        gp = thermo_g_prime(self.psi_weight * T - u_ext)
        return self._base - sp.diags(self.mass_lumped * gp * self.psi_weight)

    def temperature(self, u: Field) -> np.ndarray:
        """Return T on all n+2 nodes (damped Newton, cached per input)."""
        key = np.asarray(u, dtype=float).tobytes()
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key].copy()
        T = self._solve_temperature(np.asarray(u, dtype=float))
        with self._lock:
            self._cache[key] = T
            if len(self._cache) > 16:
                self._cache.popitem(last=False)
        return T.copy()

    def _solve_temperature(self, u: Field) -> np.ndarray:
        u_ext = self._extend(u)
        T = np.zeros_like(u_ext)
        F = self._residual(T, u_ext)
        history = [float(np.max(np.abs(F)))]
        for _ in range(self.max_iter):
            fn = np.max(np.abs(F))
            floor = 1e-15 * (1.0 + np.max(np.abs(self._base.diagonal())) * np.max(np.abs(T)))
            if fn <= floor:
                break
            J = self._jacobian(T, u_ext)
            dT = spla.spsolve(sp.csc_matrix(J), -F)
            t = 1.0
            while True:
                T_new = T + t * dT
                F_new = self._residual(T_new, u_ext)
                if np.linalg.norm(F_new) <= (1 - 1e-4 * t) * np.linalg.norm(F) or t < 1e-8:
                    break
                t *= 0.5
            step = np.max(np.abs(T_new - T))
            T, F = T_new, F_new
            history.append(float(np.max(np.abs(F))))
            if step <= 1e-16 * (1.0 + np.max(np.abs(T))):
                break
        if np.max(np.abs(F)) > self.tol:
            raise SolverError(
                f"temperature Newton did not converge, residual {np.max(np.abs(F)):.3e}", history
            )
        return T

    # -- obstacle interface ------------------------------------------------
    def eval(self, u: Field) -> Field:
        T = self.temperature(u)
        return (self.varphi * T)[1:-1]

    def _linearized(self, u: Field):
        T = self.temperature(u)
        u_ext = self._extend(u)
        gp = thermo_g_prime(self.psi_weight * T - u_ext)
        return self._jacobian(T, u_ext), gp

    def deriv(self, u: Field, h: Field) -> Field:
        J, gp = self._linearized(u)
        rhs = -self.mass_lumped * gp * self._extend(h)
        xi = spla.spsolve(sp.csc_matrix(J), rhs)
        return (self.varphi * xi)[1:-1]

    def deriv_matrix(self, u: Field) -> np.ndarray:
        n = self.space.n
        J, gp = self._linearized(u)
        rhs = np.zeros((n + 2, n))
        idx = np.arange(n)
        rhs[idx + 1, idx] = -(self.mass_lumped * gp)[1:-1]
        X = spla.splu(sp.csc_matrix(J)).solve(rhs)
        return (self.varphi[:, None] * X)[1:-1, :]

    def lipschitz_estimate(self, center, radius, n_samples=8, seed=0) -> float:
        """Closed-form bound on the V-ball about 0 that contains the requested ball.

        The bound controls the H-norm of the argument, which is below the
        V-norm, so it also serves V to V.  It is a bound for the continuous
        map; the discrete map is an O(h^2) perturbation of it.
        """
        R = float(np.sqrt(center @ (self.space.laplacian @ center))) + radius
        return thermo_lipschitz_bound(R)

    def temperature_residual(self, u: Field) -> float:
        T = self.temperature(u)
        return float(np.max(np.abs(self._residual(T, self._extend(u)))))

    def describe(self) -> dict:
        return {"kind": self.kind, "k": self.k}


def thermo_lipschitz_radius():
    """Certified radius R* around 0 and the map R -> M_R.

    For R < R* the Lipschitz bound (50/3)(R + 20(1+pi)/(3 pi) R^2) is below 1.
    """
    r_star = 3.0 / (10.0 * (1.0 + PI)) * (np.sqrt((13 * PI**2 + 8 * PI) / 80.0) - PI / 4.0)

    def m_r(R):
        return 0.5 * R + 10.0 * (1.0 + PI) / (3.0 * PI) * R**2

    return float(r_star), m_r


def thermo_lipschitz_bound(R: float) -> float:
    """Lipschitz constant of the thermoforming map on the V-ball of radius R about 0."""
    return 50.0 / 3.0 * (R + 20.0 * (1.0 + PI) / (3.0 * PI) * R**2)
