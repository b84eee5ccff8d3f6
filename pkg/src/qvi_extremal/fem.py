"""P1 finite elements on (0, 1) with homogeneous Dirichlet data.

Fields are plain ``numpy`` vectors of nodal values on the interior nodes;
dual fields (loads) are vectors of the same length holding the action of a
functional on the hat basis.  The V-norm is the H^1_0 seminorm, so the
stiffness matrix of -u'' is the Riesz map of V.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, NumericalError

Field = np.ndarray
DualField = np.ndarray

#: slack used for every nodal surrogate of an a.e. inequality
TOL_ORD = 1e-10


@dataclass(frozen=True)
class DiscreteSpace:
    n_interior: int
    h: float
    x: np.ndarray
    stiffness: sp.csc_matrix
    laplacian: sp.csc_matrix
    mass: sp.csc_matrix
    mass_lumped: np.ndarray
    c_a: float
    c_b: float
    self_adjoint: bool = True
    _lu_stiff: object = field(default=None, repr=False, compare=False)
    _lu_lap: object = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.n_interior

    @property
    def mass_lumped_matrix(self) -> sp.dia_matrix:
        return sp.diags(self.mass_lumped)

    def interpolate(self, func: Callable[[np.ndarray], np.ndarray]) -> Field:
        return np.asarray(func(self.x), dtype=float) * np.ones(self.n)

    def load(self, func_or_values) -> DualField:
        """Lumped (trapezoidal) load vector of a function or of nodal values."""
        if callable(func_or_values):
            vals = self.interpolate(func_or_values)
        else:
            vals = np.asarray(func_or_values, dtype=float)
        return self.mass_lumped * vals

    def solve_stiffness(self, rhs: DualField) -> Field:
        return self._lu_stiff.solve(np.asarray(rhs, dtype=float))

    def riesz_inverse(self, rhs: DualField) -> Field:
        """Apply L^{-1}, the inverse Riesz map V* -> V."""
        return self._lu_lap.solve(np.asarray(rhs, dtype=float))


def _p1_stiffness(a_mid: np.ndarray, h: float) -> sp.csc_matrix:
    # a_mid holds the coefficient on the n+1 elements (midpoint quadrature)
    diag = (a_mid[:-1] + a_mid[1:]) / h
    off = -a_mid[1:-1] / h
    return sp.diags([off, diag, off], [-1, 0, 1], format="csc")


def assemble_space(n_interior: int, coefficient: Callable | float = 1.0) -> DiscreteSpace:
    """Assemble stiffness, mass and lumped mass on a uniform mesh.

    ``coefficient`` is ``a`` in ``-(a u')'``; it is sampled at element
    midpoints.  ``c_a``/``c_b`` are the coercivity and boundedness
    constants with respect to the V-norm, taken as min/max of the sampled
    coefficient (exact bounds for the element-wise quadrature used).
    """
    if n_interior < 2:
        raise ConfigurationError(f"n_interior must be >= 2, got {n_interior}")
    n = int(n_interior)
    h = 1.0 / (n + 1)
    x = h * np.arange(1, n + 1)
    mids = h * (np.arange(n + 1) + 0.5)
    if callable(coefficient):
        a_mid = np.asarray(coefficient(mids), dtype=float) * np.ones(n + 1)
    else:
        a_mid = float(coefficient) * np.ones(n + 1)
    if not np.all(np.isfinite(a_mid)) or np.min(a_mid) <= 0.0:
        raise ConfigurationError("coefficient must be positive and finite on (0, 1)")

    stiffness = _p1_stiffness(a_mid, h)
    laplacian = _p1_stiffness(np.ones(n + 1), h)
    mass = sp.diags(
        [np.full(n - 1, h / 6), np.full(n, 4 * h / 6), np.full(n - 1, h / 6)],
        [-1, 0, 1],
        format="csc",
    )
    # row sums of the full mass matrix (boundary columns included)
    mass_lumped = np.full(n, h)

    if not is_m_matrix(stiffness):
        raise NumericalError("stiffness matrix is not an M-matrix")

    return DiscreteSpace(
        n_interior=n,
        h=h,
        x=x,
        stiffness=stiffness,
        laplacian=laplacian,
        mass=mass,
        mass_lumped=mass_lumped,
        c_a=float(np.min(a_mid)),
        c_b=float(np.max(a_mid)),
        self_adjoint=True,
        _lu_stiff=spla.splu(stiffness),
        _lu_lap=spla.splu(laplacian),
    )


def is_m_matrix(A: sp.spmatrix) -> bool:
    """Nonpositive off-diagonals and weak diagonal dominance."""
    A = sp.csr_matrix(A)
    d = A.diagonal()
    off = A - sp.diags(d)
    if off.nnz and off.max() > 0:
        return False
    row = np.asarray(A.sum(axis=1)).ravel()
    return bool(np.all(d > 0) and np.all(row >= -1e-12 * d))


def _check(space: DiscreteSpace, *vecs: np.ndarray) -> None:
    for v in vecs:
        if np.shape(v) != (space.n,):
            raise ValueError(f"expected a vector of length {space.n}, got shape {np.shape(v)}")


def v_norm(space: DiscreteSpace, v: Field) -> float:
    _check(space, v)
    return float(np.sqrt(max(v @ (space.laplacian @ v), 0.0)))


def h_norm(space: DiscreteSpace, v: Field) -> float:
    _check(space, v)
    return float(np.sqrt(max(v @ (space.mass @ v), 0.0)))


def dual_norm(space: DiscreteSpace, f: DualField) -> float:
    _check(space, f)
    return float(np.sqrt(max(f @ space.riesz_inverse(f), 0.0)))


def pos_part(v: Field) -> Field:
    return np.maximum(v, 0.0)


def neg_part(v: Field) -> Field:
    """v^- = v^+ - v (nonnegative)."""
    return np.maximum(-v, 0.0)


def inf(x: Field, y: Field) -> Field:
    return np.minimum(x, y)


def sup(x: Field, y: Field) -> Field:
    return np.maximum(x, y)


def order_leq(x: Field, y: Field, tol: float = TOL_ORD) -> bool:
    return bool(np.all(np.asarray(x) <= np.asarray(y) + tol))


def solve_linear(space: DiscreteSpace | None, matrix, rhs: DualField) -> Field:
    """Solve ``matrix @ x = rhs`` and verify the result.

    Accepts sparse or dense matrices.  The check is on the normwise
    backward error ``|Ax - b|_inf <= 1e-12 (|b|_inf + |A|_inf |x|_inf)``.
    """
    rhs = np.asarray(rhs, dtype=float)
    if space is not None:
        _check(space, rhs)
    try:
        if sp.issparse(matrix):
            lu = spla.splu(sp.csc_matrix(matrix))
            x = lu.solve(rhs)
        else:
            x = np.linalg.solve(np.asarray(matrix, dtype=float), rhs)
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"linear solve failed: {exc}", condition=np.inf) from exc

    res = matrix @ x - rhs
    anorm = float(abs(matrix).sum(axis=1).max()) if sp.issparse(matrix) else float(
        np.abs(matrix).sum(axis=1).max())
    scale = np.max(np.abs(rhs), initial=0.0) + anorm * np.max(np.abs(x), initial=0.0)
    if not np.all(np.isfinite(x)) or np.max(np.abs(res), initial=0.0) > 1e-12 * scale:
        raise NumericalError(
            "linear system is singular or too ill-conditioned",
            condition=condition_estimate(matrix),
        )
    return x


def condition_estimate(matrix) -> float:
    """1-norm condition estimate; inf if the factorization fails."""
    try:
        if sp.issparse(matrix):
            A = sp.csc_matrix(matrix)
            lu = spla.splu(A)
            inv = spla.LinearOperator(A.shape, matvec=lu.solve, rmatvec=lambda y: lu.solve(y, trans="T"))
            return float(spla.onenormest(A) * spla.onenormest(inv))
        return float(np.linalg.cond(np.asarray(matrix), 1))
    except (RuntimeError, np.linalg.LinAlgError):
        return float("inf")
