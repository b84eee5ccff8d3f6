"""Minimal and maximal solutions of obstacle-type quasi-variational inequalities in 1D.

The obstacle depends on the solution, ``u <= Phi(u)``.  Extremal solutions
are computed by monotone fixed-point iteration, either on the constrained
problem directly or on its Moreau-Yosida penalization.  The package also
differentiates the extremal solution maps and solves optimal control
problems constrained by them.
"""

from .control import (ControlProblem, StationarityCertificate, bouligand_residual, certify_stationarity,
                      optimize, reduced_objective, solve_adjoints)
from .errors import ConfigurationError, ConvergenceError, NumericalError, QVIError, SolverError
from .extremal import (Branch, ExtremalResult, OrderInterval, iterate_extremal, lipschitz_probe,
                       make_interval_from_bound, rho_continuation)
from .fem import DiscreteSpace, assemble_space, dual_norm, h_norm, v_norm
from .obstacles import (ConstantObstacle, InverseLaplacianObstacle, ObstacleMap, ThermoformingObstacle,
                        thermo_lipschitz_radius)
from .penalty import sigma, sigma_prime
from .sensitivity import deriv_Z, deriv_Z_rho, hadamard_check
from .solvers import SolveReport, pdas, solve_S, solve_T_rho

__version__ = "0.1.0"

__all__ = [
    "Branch", "ConfigurationError", "ConstantObstacle", "ControlProblem", "ConvergenceError",
    "DiscreteSpace", "ExtremalResult", "InverseLaplacianObstacle", "NumericalError", "ObstacleMap",
    "OrderInterval", "QVIError", "SolveReport", "SolverError", "StationarityCertificate",
    "ThermoformingObstacle", "assemble_space", "bouligand_residual", "certify_stationarity",
    "deriv_Z", "deriv_Z_rho", "dual_norm", "h_norm", "hadamard_check", "iterate_extremal",
    "lipschitz_probe", "make_interval_from_bound", "optimize", "pdas", "reduced_objective",
    "rho_continuation", "sigma", "sigma_prime", "solve_S", "solve_T_rho", "solve_adjoints",
    "thermo_lipschitz_radius", "v_norm",
]
