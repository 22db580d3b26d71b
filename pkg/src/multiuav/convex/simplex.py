"""Dense two-phase primal simplex.

Pricing is Dantzig's largest reduced cost with lowest-index tie breaking;
after a run of degenerate pivots the solver switches to Bland's rule, which
cannot cycle. Problem sizes here are a few hundred rows and columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .outcome import INFEASIBLE, MAX_ITERS, NUMERIC_FAILURE, OPTIMAL, TOL_LP, SolveOutcome

PIVOT_TOL = 1e-11
DEGENERATE_STREAK = 20


@dataclass
class LinearProgram:
    """maximize c.x  s.t.  A_ub x <= b_ub,  lower <= x <= upper.

    ``lower`` may hold ``-inf`` (free variable), ``upper`` may hold ``inf``.
    """

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        A = self.A_ub.toarray() if sp.issparse(self.A_ub) else np.asarray(self.A_ub, dtype=float)
        self.A_ub = A.reshape(-1, n)
        self.b_ub = np.asarray(self.b_ub, dtype=float).ravel()
        if self.b_ub.size != self.A_ub.shape[0]:
            raise ValueError("A_ub and b_ub row counts differ")
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must match the number of variables")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.A_ub))
                and np.all(np.isfinite(self.b_ub))):
            raise ValueError("coefficients must be finite")
        if np.any(self.lower > self.upper) or np.any(self.lower == np.inf) \
                or np.any(self.upper == -np.inf):
            raise ValueError("inconsistent variable bounds")

    @property
    def num_vars(self) -> int:
        return self.c.size


def _standard_form(lp: LinearProgram):
    """Map to max c'y s.t. A'y <= b', y >= 0; return data and a back-map."""
    n = lp.num_vars
    finite_lo = np.isfinite(lp.lower)
    shift = np.where(finite_lo, lp.lower, 0.0)
    cols = []  # (original index, sign)
    for i in range(n):
        cols.append((i, 1.0))
        if not finite_lo[i]:
            cols.append((i, -1.0))
    T = np.zeros((n, len(cols)))
    for j, (i, s) in enumerate(cols):
        T[i, j] = s
    # x = shift + T y
    A = lp.A_ub @ T
    b = lp.b_ub - lp.A_ub @ shift
    rows, rhs = [A], [b]
    for i in np.nonzero(np.isfinite(lp.upper))[0]:
        rows.append(T[i:i + 1])
        rhs.append(np.array([lp.upper[i] - shift[i]]))
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    c = lp.c @ T
    return c, A, b, shift, T


class _Tableau:
    def __init__(self, A, b, basis):
        self.A = A
        self.b = b
        self.basis = basis
        self.degenerate = 0

    def pivot(self, row, col):
        piv = self.A[row, col]
        self.A[row] /= piv
        self.b[row] /= piv
        factor = self.A[:, col].copy()
        factor[row] = 0.0
        self.A -= np.outer(factor, self.A[row])
        self.b -= factor * self.b[row]
        self.A[:, col] = 0.0
        self.A[row, col] = 1.0
        np.maximum(self.b, 0.0, out=self.b, where=self.b > -1e-12)
        self.basis[row] = col

    def run(self, cost, allowed, max_iter):
        """Minimise ``cost . z``; ``allowed`` masks columns that may enter."""
        its = 0
        while its < max_iter:
            cb = cost[self.basis]
            reduced = cost - cb @ self.A
            cand = np.nonzero((reduced < -TOL_LP) & allowed)[0]
            if cand.size == 0:
                return OPTIMAL, its
            if self.degenerate >= DEGENERATE_STREAK:
                col = cand[0]  # Bland
            else:
                col = cand[np.argmin(reduced[cand])]  # first index among ties
            colv = self.A[:, col]
            pos = colv > PIVOT_TOL
            if not np.any(pos):
                return "unbounded", its
            ratios = np.full(colv.shape, np.inf)
            ratios[pos] = self.b[pos] / colv[pos]
            best = ratios.min()
            ties = np.nonzero(ratios <= best + 1e-12 * max(1.0, best))[0]
            # lowest basic variable index among tied rows
            row = ties[np.argmin(self.basis[ties])]
            self.degenerate = self.degenerate + 1 if best <= 1e-12 else 0
            self.pivot(row, col)
            its += 1
        return MAX_ITERS, its


def solve_lp(lp: LinearProgram, max_iter: int = 50_000) -> SolveOutcome:
    c, A, b, shift, T = _standard_form(lp)
    m, n = A.shape
    neg = b < 0
    A = A.copy()
    b = b.copy()
    A[neg] *= -1.0
    b[neg] *= -1.0
    # columns: structural (n), slack/surplus (m), artificial (one per negated row)
    art_rows = np.nonzero(neg)[0]
    n_art = art_rows.size
    slack = np.eye(m)
    slack[neg] *= -1.0
    art = np.zeros((m, n_art))
    art[art_rows, np.arange(n_art)] = 1.0
    tab_A = np.hstack([A, slack, art])
    basis = np.arange(n, n + m)
    basis[art_rows] = n + m + np.arange(n_art)
    tab = _Tableau(tab_A, b, basis)
    total = n + m + n_art
    iterations = 0

    if n_art:
        cost1 = np.zeros(total)
        cost1[n + m:] = 1.0
        status, its = tab.run(cost1, np.ones(total, dtype=bool), max_iter)
        iterations += its
        if status == MAX_ITERS:
            return SolveOutcome(MAX_ITERS, np.full(lp.num_vars, np.nan), np.nan, iterations,
                                message="phase one did not finish")
        if tab.b[tab.basis >= n + m].sum() > 1e-8 * max(1.0, np.abs(b).max()):
            return SolveOutcome(INFEASIBLE, np.full(lp.num_vars, np.nan), np.nan, iterations,
                                message="no point satisfies the constraints")
        # drive remaining (zero-valued) artificials out of the basis
        for row in np.nonzero(tab.basis >= n + m)[0]:
            cand = np.nonzero(np.abs(tab.A[row, :n + m]) > PIVOT_TOL)[0]
            if cand.size:
                tab.pivot(row, cand[0])

    cost2 = np.zeros(total)
    cost2[:n] = -c
    allowed = np.ones(total, dtype=bool)
    allowed[n + m:] = False
    tab.degenerate = 0
    status, its = tab.run(cost2, allowed, max_iter - iterations)
    iterations += its
    y = np.zeros(total)
    y[tab.basis] = tab.b
    x = shift + T @ y[:n]
    if status == "unbounded":
        return SolveOutcome(NUMERIC_FAILURE, x, np.inf, iterations,
                            message="objective is unbounded above")
    return SolveOutcome(status, x, float(lp.c @ x), iterations)
