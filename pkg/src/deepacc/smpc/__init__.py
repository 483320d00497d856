"""Stochastic MPC: Gaussian constraint tightening, QP transcription and solver."""
from .special import inverse_erf, tightening_margin
from .qp import (
    INFEASIBLE, MAX_ITER, OPTIMAL, QpProblem, QpSolution, box_qp, dump_qp,
    kkt_residuals, load_qp_dump, solve_qp,
)
from .mpc import MpcConfig, MpcSolution, build_qp, mpc_step, safety_margins, variable_names

__all__ = [
    "inverse_erf", "tightening_margin", "QpProblem", "QpSolution", "solve_qp",
    "kkt_residuals", "dump_qp", "load_qp_dump", "box_qp", "OPTIMAL", "MAX_ITER",
    "INFEASIBLE", "MpcConfig", "MpcSolution", "build_qp", "mpc_step",
    "safety_margins", "variable_names",
]
