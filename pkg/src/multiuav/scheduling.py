"""User scheduling/association block: a max-min LP over relaxed weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convex import OPTIMAL, LinearProgram, solve_lp
from .model import PowerProfile, Schedule, Scenario, Trajectory, rate_table

FILL_TOL = 1e-12


class SchedulingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SchedulingProblem:
    """Per-slot rates ``r_{k,m}[n]`` (K, M, N) and an optional (M, N) transmit mask."""

    rates: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=float)
        if r.ndim != 3:
            raise ValueError("rate table must be (K, M, N)")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValueError("rate table entries must be finite and non-negative")
        object.__setattr__(self, "rates", r)
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != r.shape[1:]:
                raise ValueError("mask must be (M, N)")
            object.__setattr__(self, "mask", mask)

    @property
    def num_slots(self) -> int:
        return self.rates.shape[2]

    def allowed(self) -> np.ndarray:
        """(K, M, N) boolean array of pairs the LP may schedule."""
        if self.mask is None:
            return np.ones(self.rates.shape, dtype=bool)
        return np.broadcast_to(self.mask[None], self.rates.shape).copy()


def build_scheduling_lp(scenario: Scenario, trajectory: Trajectory, power: PowerProfile,
                        mask=None) -> SchedulingProblem:
    return SchedulingProblem(rate_table(scenario, trajectory, power), mask)


def _lp(problem: SchedulingProblem) -> LinearProgram:
    r = problem.rates
    K, M, N = r.shape
    nv = K * M * N + 1
    idx = np.arange(K * M * N).reshape(K, M, N)  # k-major, then m, then n; eta last
    rows = []
    # eta - (1/N) sum_{m,n} alpha r <= 0
    for k in range(K):
        row = np.zeros(nv)
        row[idx[k].ravel()] = -r[k].ravel() / N
        row[-1] = 1.0
        rows.append(row)
    for m in range(M):
        for n in range(N):
            row = np.zeros(nv)
            row[idx[:, m, n]] = 1.0
            rows.append(row)
    if M > 1:
        for k in range(K):
            for n in range(N):
                row = np.zeros(nv)
                row[idx[k, :, n]] = 1.0
                rows.append(row)
    A = np.array(rows)
    b = np.zeros(len(rows))
    b[K:] = 1.0
    upper = np.full(nv, np.inf)  # alpha <= 1 follows from the per-UAV rows
    upper[:-1][~problem.allowed().ravel()] = 0.0
    c = np.zeros(nv)
    c[-1] = 1.0
    return LinearProgram(c, A, b, lower=np.zeros(nv), upper=upper)


def _fill(alpha, rates, allowed):
    """Hand leftover UAV airtime to unsaturated users; no user rate decreases."""
    K, M, N = alpha.shape
    for n in range(N):
        for m in range(M):
            spare = 1.0 - alpha[:, m, n].sum()
            for k in range(K):
                if spare <= FILL_TOL:
                    break
                if not allowed[k, m, n] or rates[k, m, n] <= 0:
                    continue
                room = 1.0 - alpha[k, :, n].sum()
                if room <= FILL_TOL:
                    continue
                add = min(spare, room)
                alpha[k, m, n] += add
                spare -= add
    return alpha


def solve_scheduling(problem: SchedulingProblem) -> tuple[Schedule, float]:
    """Optimal relaxed schedule and its max-min rate."""
    r = problem.rates
    K, M, N = r.shape
    if not np.any(r > 0):
        return Schedule(np.zeros_like(r)), 0.0
    out = solve_lp(_lp(problem))
    if out.status != OPTIMAL:
        raise SchedulingError(f"scheduling LP failed: {out.status} {out.message}")
    alpha = np.clip(out.x[:-1].reshape(K, M, N), 0.0, 1.0)
    alpha[~problem.allowed()] = 0.0
    # clip round-off so row sums never exceed one
    for axis in (0, 1):
        total = alpha.sum(axis=axis, keepdims=True)
        alpha = np.where(total > 1.0, alpha / np.maximum(total, 1.0), alpha)
    alpha = _fill(alpha, r, problem.allowed())
    eta = float(np.einsum("kmn,kmn->k", alpha, r).min() / N)
    return Schedule(alpha), eta
