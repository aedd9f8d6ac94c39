from .altmin import altmin_factors, altmin_solve
from .options import SolverOptions, SolverReport, Status
from .rcg import rcg_solve
from .rtr import rtr_solve, steihaug_cg, truncated_cg

__all__ = [
    "SolverOptions",
    "SolverReport",
    "Status",
    "altmin_factors",
    "altmin_solve",
    "rcg_solve",
    "rtr_solve",
    "steihaug_cg",
    "truncated_cg",
]
