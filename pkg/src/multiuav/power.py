"""Power block: difference-of-concave surrogate around P^r.

The interference term log2(sum_{j!=m} p_j h_kj + sigma^2) is concave in the
powers, so its tangent at P^r is a global upper bound; subtracting it from
the concave total-power term leaves a concave lower bound on each rate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .convex import (NUMERIC_FAILURE, ConstraintBlock, SmoothConvexProgram, affine_block,
                     linear_objective, solve_smooth)
from .model import LN2, PowerProfile, Schedule, Scenario, Trajectory, gain_table, min_rate

log = logging.getLogger(__name__)

ETA_MARGIN = 1e-9
REJECT_NOTE_RTOL = 1e-9  # smaller losses are round-off and rejected silently
SNAP_RTOL = 1e-5


@dataclass(frozen=True)
class PowerLocalPoint:
    power: PowerProfile
    schedule: Schedule
    trajectory: Trajectory


@dataclass(frozen=True)
class InterferenceSlopes:
    """``D[k, m, j, n]``: slope (bps/Hz per W) of the interference term of
    user k served by UAV m with respect to p_j[n]; zero on j == m."""

    D: np.ndarray
    gains: np.ndarray
    expansion: np.ndarray
    noise_power: float

    @property
    def num_uavs(self) -> int:
        return self.D.shape[1]


def _interference(gains, levels):
    """sum_{j != m} p_j[n] h_kj[n] as (K, M, N)."""
    M = levels.shape[0]
    E = 1.0 - np.eye(M)
    return np.einsum("kjn,jn,mj->kmn", gains, levels, E)


def compute_power_slopes(scenario: Scenario, local: PowerLocalPoint) -> InterferenceSlopes:
    h = gain_table(scenario, local.trajectory)
    pr = local.power.levels
    M = pr.shape[0]
    denom = _interference(h, pr) + scenario.noise_power  # (K, M, N)
    E = 1.0 - np.eye(M)
    D = np.einsum("kjn,kmn,mj->kmjn", h, 1.0 / denom, E) / LN2
    return InterferenceSlopes(D, h, pr.copy(), scenario.noise_power)


def interference_log(gains, levels, noise_power) -> np.ndarray:
    """Exact ``log2(sum_{j!=m} p_j h_kj + sigma^2)`` as (K, M, N)."""
    return np.log2(_interference(gains, levels) + noise_power)


def interference_upper_bound(slopes: InterferenceSlopes, power, local=None) -> np.ndarray:
    """Affine upper bound on `interference_log`, tight at the expansion point."""
    p = power.levels if isinstance(power, PowerProfile) else np.asarray(power)
    base = interference_log(slopes.gains, slopes.expansion, slopes.noise_power)
    return base + np.einsum("kmjn,jn->kmn", slopes.D, p - slopes.expansion)


@dataclass
class PowerSubproblem:
    program: SmoothConvexProgram
    max_power: float
    free: np.ndarray
    shape: tuple
    user_average: object

    def levels(self, x) -> np.ndarray:
        """Normalized (M, N) powers; masked entries are zero."""
        full = np.zeros(int(np.prod(self.shape)))
        full[self.free] = x[:-1]
        return full.reshape(self.shape)

    def power(self, x) -> PowerProfile:
        return PowerProfile(np.clip(self.levels(x), 0.0, 1.0) * self.max_power)

    def eta(self, x) -> float:
        return float(x[-1])


def build_power_subproblem(scenario: Scenario, local: PowerLocalPoint,
                           slopes: InterferenceSlopes | None = None,
                           mask=None) -> PowerSubproblem:
    """Variables: powers divided by P_max for the UAV-slots allowed by
    ``mask`` (row-major over (M, N)), then eta. Masked powers are zero."""
    if slopes is None:
        slopes = compute_power_slopes(scenario, local)
    alpha = local.schedule.weights
    K, M, N = alpha.shape
    if N != scenario.num_slots:
        raise ValueError("power block needs a slot-level (not sub-slot) schedule")
    mask = np.ones((M, N), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    free = np.nonzero(mask.ravel())[0]
    nf = free.size
    nv = nf + 1
    G = slopes.gains * scenario.max_power / scenario.noise_power  # SNR per unit normalized power
    pr = np.where(mask, local.power.levels / scenario.max_power, 0.0)
    Dn = slopes.D * scenario.max_power
    E = 1.0 - np.eye(M)
    a_kn = alpha.sum(axis=1)
    base = np.log2(np.einsum("kjn,jn,mj->kmn", G, pr, E) + 1.0)
    # sum_m alpha_kmn sum_j D_kmjn (pi_j - pi_j^r) collapses to lin . (pi - pi^r)
    lin = np.einsum("kmn,kmjn->kjn", alpha, Dn)
    const = np.einsum("kmn,kmn->k", alpha, base) - np.einsum("kjn,jn->k", lin, pr)
    lin_free = lin.reshape(K, -1)[:, free]
    G_flat = G.reshape(K, M * N)
    slot_of = free % N

    def levels(x):
        full = np.zeros(M * N)
        full[free] = x[:-1]
        return full.reshape(M, N)

    def psi(p):
        return np.einsum("kjn,jn->kn", G, p) + 1.0

    def user_average(x):
        p = levels(x)
        s = psi(p)
        if np.any(s <= 0):
            return np.full(K, -np.inf)
        total = np.einsum("kn,kn->k", a_kn, np.log2(s))
        return (total - const - lin_free @ x[:-1]) / N

    def rate_fun(x):
        return x[-1] - user_average(x)

    def rate_jac(x):
        s = psi(levels(x))
        J = np.empty((K, nv))
        J[:, :-1] = -(a_kn[:, slot_of] * G_flat[:, free] / (LN2 * s[:, slot_of]) - lin_free) / N
        J[:, -1] = 1.0
        return J

    def rate_hess(x, weights):
        s = psi(levels(x))
        coef = weights[:, None] * a_kn / (N * LN2 * s ** 2)  # (K, N)
        Gf = G_flat[:, free]
        same_slot = slot_of[:, None] == slot_of[None, :]
        Hs = np.zeros((nv, nv))
        Hs[:-1, :-1] = np.einsum("ka,kb,ka->ab", Gf, Gf, coef[:, slot_of]) * same_slot
        return Hs

    rows = np.arange(nf)
    eye = sp.csr_matrix((np.ones(nf), (rows, rows)), shape=(nf, nv))
    blocks = [ConstraintBlock("logsum", rate_fun, rate_jac, rate_hess, "rate"),
              affine_block(sp.vstack([eye, -eye]), np.concatenate([np.ones(nf), np.zeros(nf)]),
                           "box")]
    x0 = np.append(pr.ravel()[free], 0.0)
    x0[-1] = float(user_average(x0).min()) - ETA_MARGIN
    e = np.zeros(nv)
    e[-1] = 1.0
    prog = SmoothConvexProgram(linear_objective(e), blocks, x0,
                               {"power": slice(0, nf), "eta": slice(nf, nv)})
    return PowerSubproblem(prog, scenario.max_power, free, (M, N), user_average)


class PowerStep(NamedTuple):
    power: PowerProfile
    eta: float
    surrogate_eta: float
    warning: str


def _relevant(alpha) -> np.ndarray:
    """(M, N) mask of powers that influence some scheduled rate."""
    served = alpha.sum(axis=(0, 1)) > 0  # slot has any service
    return np.broadcast_to(served[None, :], alpha.shape[1:])


def solve_power_block(scenario: Scenario, local: PowerLocalPoint, mask=None) -> PowerStep:
    """One SCA step on the powers; never lowers the true max-min rate."""
    schedule, trajectory = local.schedule, local.trajectory
    p_r = local.power
    eta_r = min_rate(scenario, schedule, trajectory, p_r)
    M, N = p_r.levels.shape
    mask = np.ones((M, N), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if M == 1:
        # no interference: full power maximizes every rate at once
        full = PowerProfile(np.where(mask, scenario.max_power, 0.0))
        eta_full = min_rate(scenario, schedule, trajectory, full)
        return PowerStep(full, eta_full, eta_full, "")
    relevant = _relevant(schedule.weights) & mask
    if not relevant.any():
        return PowerStep(p_r, eta_r, eta_r, "")
    sub = build_power_subproblem(scenario, local, mask=relevant)
    try:
        out = solve_smooth(sub.program)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("power subproblem failed: %s", exc)
        return PowerStep(p_r, eta_r, eta_r, f"solver error: {exc}")
    levels = sub.levels(out.x)
    # untouched entries: keep P^r where allowed, zero where masked
    levels = np.where(relevant, levels, np.where(mask, p_r.levels / scenario.max_power, 0.0))
    levels = np.clip(levels, 0.0, 1.0)
    candidate = PowerProfile(levels * scenario.max_power)
    eta_new = min_rate(scenario, schedule, trajectory, candidate)
    # snap near-boundary values onto the box when that does not hurt
    snapped = np.where(levels > 1 - SNAP_RTOL, 1.0, np.where(levels < SNAP_RTOL, 0.0, levels))
    snapped = np.where(relevant, snapped, levels)
    snap_power = PowerProfile(snapped * scenario.max_power)
    eta_snap = min_rate(scenario, schedule, trajectory, snap_power)
    if eta_snap >= eta_new:
        candidate, eta_new = snap_power, eta_snap
    if eta_new < eta_r:
        return PowerStep(p_r, eta_r, eta_r, _rejection(out.status, eta_new, eta_r))
    warning = "" if out.status != NUMERIC_FAILURE else f"solver status {out.status}"
    return PowerStep(candidate, eta_new, sub.eta(out.x), warning)


def _rejection(status, eta_new, eta_r) -> str:
    if eta_r - eta_new <= REJECT_NOTE_RTOL * max(1.0, abs(eta_r)):
        return ""
    return f"step rejected ({status}): {eta_new:.12g} < {eta_r:.12g}"
