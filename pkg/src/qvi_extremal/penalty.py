"""Smoothed positive part and the superposition operators it induces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .fem import DiscreteSpace, DualField, Field


@dataclass(frozen=True)
class PenaltyParams:
    rho: float

    def __post_init__(self):
        _check_rho(self.rho)


def _check_rho(rho: float) -> None:
    if not rho > 0:
        raise ConfigurationError(f"rho must be positive, got {rho}")


def sigma(rho: float, r):
    """0 for r <= 0, r^2/(2 rho) on (0, rho), r - rho/2 beyond.

    The result is nudged by at most a few ulps so that
    ``0 <= max(r, 0) - sigma(rho, r) <= rho/2`` holds in floating point.
    """
    _check_rho(rho)
    r = np.asarray(r, dtype=float)
    out = np.where(r <= 0, 0.0, np.where(r < rho, r * r / (2 * rho), r - rho / 2))
    rp = np.maximum(r, 0.0)
    for _ in range(8):
        gap = rp - out
        hi = gap > rho / 2
        lo = gap < 0
        if not (hi.any() or lo.any()):
            break
        out = np.where(hi, np.nextafter(out, np.inf), out)
        out = np.where(lo, np.nextafter(out, -np.inf), out)
    return out if out.ndim else float(out)


def sigma_prime(rho: float, r):
    _check_rho(rho)
    r = np.asarray(r, dtype=float)
    out = np.clip(r / rho, 0.0, 1.0)
    return out if out.ndim else float(out)


def sigma_primitive(rho: float, r):
    """Antiderivative of sigma vanishing on r <= 0 (convex energy density)."""
    _check_rho(rho)
    r = np.asarray(r, dtype=float)
    out = np.where(
        r <= 0,
        0.0,
        np.where(r < rho, r**3 / (6 * rho), 0.5 * r * r - 0.5 * rho * r + rho * rho / 6),
    )
    return out if out.ndim else float(out)


def sigma_field(space: DiscreteSpace, rho: float, v: Field) -> DualField:
    return space.mass_lumped * sigma(rho, np.asarray(v, dtype=float))


def sigma_prime_diag(space: DiscreteSpace, rho: float, v: Field) -> sp.dia_matrix:
    return sp.diags(space.mass_lumped * sigma_prime(rho, np.asarray(v, dtype=float)))
