"""Solvers for the scheduling LP and the SCA subproblems."""

from .barrier import (ConstraintBlock, Objective, SmoothConvexProgram, affine_block,
                      check_gradients, linear_objective, solve_smooth)
from .outcome import (INFEASIBLE, MAX_ITERS, NUMERIC_FAILURE, OPTIMAL, TOL_FEAS, TOL_KKT,
                      TOL_LP, SolveOutcome)
from .simplex import LinearProgram, solve_lp

__all__ = [
    "ConstraintBlock", "Objective", "SmoothConvexProgram", "affine_block", "check_gradients",
    "linear_objective", "solve_smooth", "SolveOutcome", "LinearProgram", "solve_lp",
    "OPTIMAL", "MAX_ITERS", "INFEASIBLE", "NUMERIC_FAILURE", "TOL_FEAS", "TOL_KKT", "TOL_LP",
]
