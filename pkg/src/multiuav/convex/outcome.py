from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
MAX_ITERS = "max_iters"
INFEASIBLE = "infeasible"
NUMERIC_FAILURE = "numeric_failure"

TOL_FEAS = 1e-7
TOL_KKT = 1e-6
TOL_LP = 1e-9


@dataclass
class SolveOutcome:
    status: str
    x: np.ndarray
    objective: float
    iterations: int
    kkt_residual: float = 0.0
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL
