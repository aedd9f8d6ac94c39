"""Low-rank alignment for topological transmitter cooperation.

Riemannian trust-region and conjugate-gradient solvers on the quotient of
full-rank complex ``N x r`` matrices, applied to the rank-minimization
problem that sets the achievable degrees of freedom.
"""

from .manifold import FactorPoint, HorizontalVector, project_horizontal, random_point, retract, transport
from .problem import AffineSystem, NetworkInstance, ProblemHandle, build_affine_system, cost
from .rank_search import RankSearchResult, extract_beamformers, minimize_rank
from .solvers import SolverOptions, SolverReport, altmin_solve, rcg_solve, rtr_solve

__version__ = "0.1.0"

__all__ = [
    "AffineSystem",
    "FactorPoint",
    "HorizontalVector",
    "NetworkInstance",
    "ProblemHandle",
    "RankSearchResult",
    "SolverOptions",
    "SolverReport",
    "altmin_solve",
    "build_affine_system",
    "cost",
    "extract_beamformers",
    "minimize_rank",
    "project_horizontal",
    "random_point",
    "rcg_solve",
    "retract",
    "rtr_solve",
    "transport",
]
