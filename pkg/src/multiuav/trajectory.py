"""Trajectory block: convex surrogate of the max-min problem around Q^r.

Internally positions are divided by the altitude H and received powers by
the noise power, so every log term and distance is O(1). Public helpers
(`compute_taylor_coeffs`, `rate_lower_bound`, `rate_hat`) work in physical
units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .convex import (NUMERIC_FAILURE, ConstraintBlock, SmoothConvexProgram, affine_block,
                     linear_objective, solve_smooth)
from .model import (LN2, SEPARATION_RTOL, EXACT_RTOL, PowerProfile, Schedule, Scenario,
                    Trajectory, min_rate)

log = logging.getLogger(__name__)

ETA_MARGIN = 1e-9
REJECT_NOTE_RTOL = 1e-9  # smaller losses are round-off and rejected silently


@dataclass(frozen=True)
class TrajectoryLocalPoint:
    trajectory: Trajectory
    schedule: Schedule
    power: PowerProfile


@dataclass(frozen=True)
class TaylorCoefficients:
    """Slopes ``A`` (K, M, N) in bps/Hz per m^2 and offsets ``B`` (K, N).

    ``B`` is ``log2`` of the total received power plus noise at the
    expansion point; it does not depend on the interfering UAV, so it is
    stored once per (user, slot).
    """

    A: np.ndarray
    B: np.ndarray
    users: np.ndarray
    expansion: np.ndarray


def _sq_dist(q, users):
    """||q_j[n] - w_k||^2 as (K, M, N) for q of shape (M, N, 2)."""
    diff = q[None, :, :, :] - users[:, None, None, :]
    return np.einsum("kmnd,kmnd->kmn", diff, diff)


def rate_hat(scenario: Scenario, trajectory: Trajectory, power: PowerProfile) -> np.ndarray:
    """``log2(sum_j p_j h_kj + sigma^2)`` per (user, slot), physical units."""
    h = scenario.ref_channel_gain / (scenario.altitude ** 2
                                     + _sq_dist(trajectory.waypoints, scenario.user_positions))
    total = np.einsum("kjn,jn->kn", h, power.levels) + scenario.noise_power
    return np.log2(total)


def compute_taylor_coeffs(scenario: Scenario, local: TrajectoryLocalPoint) -> TaylorCoefficients:
    H2 = scenario.altitude ** 2
    d2 = _sq_dist(local.trajectory.waypoints, scenario.user_positions)
    received = local.power.levels[None] * scenario.ref_channel_gain / (H2 + d2)
    total = received.sum(axis=1) + scenario.noise_power
    A = (received / (H2 + d2)) / (LN2 * total[:, None, :])
    B = np.log2(total)
    return TaylorCoefficients(A, B, scenario.user_positions, local.trajectory.waypoints)


def rate_lower_bound(coeffs: TaylorCoefficients, trajectory, local=None) -> np.ndarray:
    """Concave lower bound on ``rate_hat`` at ``trajectory``, broadcast to (K, M, N).

    The bound does not depend on the serving UAV m.
    """
    q = trajectory.waypoints if isinstance(trajectory, Trajectory) else np.asarray(trajectory)
    d2 = _sq_dist(q, coeffs.users)
    d2r = _sq_dist(coeffs.expansion, coeffs.users)
    lb = coeffs.B - np.einsum("kjn,kjn->kn", coeffs.A, d2 - d2r)
    K, M, N = coeffs.A.shape
    return np.broadcast_to(lb[:, None, :], (K, M, N)).copy()


class _Layout:
    def __init__(self, M, N, active):
        self.M, self.N = M, N
        self.nu = M * (N - 1) * 2
        self.active = active
        self.ns = int(active.sum())
        self.s_index = np.full(active.shape, -1)
        self.s_index[active] = self.nu + np.arange(self.ns)
        self.eta = self.nu + self.ns
        self.size = self.eta + 1
        # var index of coordinate d of UAV m at slot n (slot N-1 aliases slot 0)
        slots = np.arange(N) % (N - 1)
        self.u_index = (np.arange(M)[:, None, None] * (N - 1) * 2
                        + slots[None, :, None] * 2 + np.arange(2)[None, None, :])

    def positions(self, x):
        u = x[:self.nu].reshape(self.M, self.N - 1, 2)
        return np.concatenate([u, u[:, :1]], axis=1)

    def pack(self, u_full, s_full, eta):
        x = np.empty(self.size)
        x[:self.nu] = u_full[:, :-1].ravel()
        x[self.nu:self.eta] = s_full[self.active]
        x[self.eta] = eta
        return x


@dataclass
class TrajectorySubproblem:
    """The built convex program plus helpers to read its variables."""

    program: SmoothConvexProgram
    layout: _Layout
    scale: float
    user_average: object

    def trajectory(self, x) -> Trajectory:
        return Trajectory(self.layout.positions(x) * self.scale)

    def slacks(self, x) -> np.ndarray:
        """Slack values in m^2, NaN where no slack variable exists."""
        out = np.full(self.layout.active.shape, np.nan)
        out[self.layout.active] = x[self.layout.nu:self.layout.eta] * self.scale ** 2
        return out

    def eta(self, x) -> float:
        return float(x[self.layout.eta])


def build_trajectory_subproblem(scenario: Scenario, local: TrajectoryLocalPoint,
                                coeffs: TaylorCoefficients | None = None) -> TrajectorySubproblem:
    if coeffs is None:
        coeffs = compute_taylor_coeffs(scenario, local)
    H = scenario.altitude
    alpha = local.schedule.weights
    K, M, N = alpha.shape
    if N != scenario.num_slots:
        raise ValueError("trajectory block needs a slot-level (not sub-slot) schedule")
    w = scenario.user_positions / H
    ur = local.trajectory.waypoints / H
    c = local.power.levels / scenario.max_power * scenario.reference_snr  # (M, N)
    A = coeffs.A * H ** 2  # per normalized squared distance
    B = coeffs.B - np.log2(scenario.noise_power)  # (K, N), noise-normalized
    dr = _sq_dist(ur, w)
    a_kn = alpha.sum(axis=1)
    E = 1.0 - np.eye(M)
    serve_other = np.einsum("kmn,mj->kjn", alpha, E)
    active = (serve_other > 0) & (c[None] > 0) if M > 1 else np.zeros((K, M, N), dtype=bool)
    lay = _Layout(M, N, active)
    nv = lay.size
    ui = lay.u_index

    def unpack(x):
        u = lay.positions(x)
        S = dr.copy()
        S[active] = x[lay.nu:lay.eta]
        return u, S

    def terms(x):
        u, S = unpack(x)
        d2 = _sq_dist(u, w)
        one_s = 1.0 + S
        T = c[None] / one_s
        phi = 1.0 + np.einsum("kjn,mj->kmn", T, E)
        return u, S, d2, one_s, T, phi

    def user_average(x):
        u, S, d2, one_s, T, phi = terms(x)
        rlb = B - np.einsum("kjn,kjn->kn", A, d2 - dr)
        return (np.einsum("kn,kn->k", a_kn, rlb)
                - np.einsum("kmn,kmn->k", alpha, np.log2(phi))) / N

    def rate_fun(x):
        S = x[lay.nu:lay.eta]
        if S.size and np.any(1.0 + S <= 0):
            return np.full(K, np.inf)
        return x[lay.eta] - user_average(x)

    def rate_jac(x):
        u, S, d2, one_s, T, phi = terms(x)
        J = np.zeros((K, nv))
        coef = 2.0 / N * (a_kn[:, None, :] * A)  # (K, M, N)
        diff = u[None] - w[:, None, None, :]  # (K, M, N, 2)
        vals = coef[..., None] * diff
        for k in range(K):
            np.add.at(J[k], ui.ravel(), vals[k].ravel())
        if lay.ns:
            wgt = alpha / (phi * LN2)
            wsum = np.einsum("kmn,mj->kjn", wgt, E)
            dT = -T / one_s
            g = wsum * dT / N
            kk = np.nonzero(active)[0]
            J[kk, lay.s_index[active]] = g[active]
        J[:, lay.eta] = 1.0
        return J

    s_act = lay.s_index[active]
    sidx = lay.s_index.transpose(0, 2, 1)  # (K, N, M)
    pair = (sidx[:, :, :, None] >= 0) & (sidx[:, :, None, :] >= 0)
    pair_rows = np.broadcast_to(sidx[:, :, :, None], pair.shape)[pair]
    pair_cols = np.broadcast_to(sidx[:, :, None, :], pair.shape)[pair]

    def rate_hess(x, weights):
        u, S, d2, one_s, T, phi = terms(x)
        Hs = np.zeros((nv, nv))
        diag_u = np.einsum("k,kn,kjn->jn", weights, a_kn, A) * 2.0 / N  # (M, N)
        np.add.at(Hs, (ui.ravel(), ui.ravel()), np.repeat(diag_u[:, :, None], 2, axis=2).ravel())
        if lay.ns:
            wgt = alpha / (phi * LN2)
            wsum = np.einsum("kmn,mj->kjn", wgt, E)
            dT = -T / one_s
            d2T = 2.0 * T / one_s ** 2
            dvals = weights[:, None, None] * wsum * d2T / N
            Hs[s_act, s_act] += dvals[active]
            z = weights[:, None, None] * alpha / (N * LN2 * phi ** 2)  # (K, M, N)
            # block[k, n, j, i] = -sum_m z_kmn E_mj E_mi dT_kjn dT_kin
            block = -np.einsum("kmn,mj,mi,kjn,kin->knji", z, E, E, dT, dT)
            np.add.at(Hs, (pair_rows, pair_cols), block[pair])
        return Hs

    blocks = [ConstraintBlock("logsum", rate_fun, rate_jac, rate_hess, "rate")]

    if lay.ns:
        kk, jj, nn = np.nonzero(active)
        grad_dir = ur[jj, nn] - w[kk]  # (L, 2)
        scale = 1.0 + dr[active]
        L = kk.size
        rows = np.repeat(np.arange(L), 3)
        cols = np.stack([lay.s_index[active], ui[jj, nn, 0], ui[jj, nn, 1]], axis=1).ravel()
        vals = np.stack([np.ones(L), -2 * grad_dir[:, 0], -2 * grad_dir[:, 1]], axis=1)
        vals = (vals / scale[:, None]).ravel()
        Aslack = sp.csr_matrix((vals, (rows, cols)), shape=(L, nv))
        rhs = (dr[active] - 2 * np.einsum("ld,ld->l", grad_dir, ur[jj, nn])) / scale
        blocks.append(affine_block(Aslack, rhs, "slack"))
        # S >= 0: a squared distance; also keeps 1 + S away from its pole
        srows = np.arange(lay.ns)
        Apos = sp.csr_matrix((-np.ones(lay.ns), (srows, lay.nu + srows)), shape=(lay.ns, nv))
        blocks.append(affine_block(Apos, np.zeros(lay.ns), "slack_sign"))

    smax2 = (scenario.max_step / H) ** 2
    hop_a = ui[:, :-1].reshape(-1, 2)
    hop_b = ui[:, 1:].reshape(-1, 2)
    n_hops = hop_a.shape[0]

    def speed_fun(x):
        u = lay.positions(x)
        d = np.diff(u, axis=1).reshape(-1, 2)
        return np.einsum("ld,ld->l", d, d) / smax2 - 1.0

    hop_rows = np.arange(n_hops)
    a_flat, b_flat = hop_a.ravel(), hop_b.ravel()
    hop_of = np.repeat(np.arange(n_hops), 2)

    def speed_jac(x):
        u = lay.positions(x)
        d = np.diff(u, axis=1).reshape(-1, 2) * (2.0 / smax2)
        J = np.zeros((n_hops, nv))
        np.add.at(J, (hop_rows[:, None], hop_b), d)
        np.add.at(J, (hop_rows[:, None], hop_a), -d)
        return J

    def speed_hess(x, weights):
        Hs = np.zeros((nv, nv))
        w2 = weights * (2.0 / smax2)
        np.add.at(Hs, (a_flat, a_flat), w2[hop_of])
        np.add.at(Hs, (b_flat, b_flat), w2[hop_of])
        np.add.at(Hs, (a_flat, b_flat), -w2[hop_of])
        np.add.at(Hs, (b_flat, a_flat), -w2[hop_of])
        return Hs

    blocks.append(ConstraintBlock("quadratic", speed_fun, speed_jac, speed_hess, "speed"))

    if M > 1:
        dmin2 = (scenario.min_separation / H) ** 2
        rows, cols, vals, rhs = [], [], [], []
        r = 0
        for j in range(M):
            for m in range(j + 1, M):
                for n in range(N - 1):
                    delta = ur[m, n] - ur[j, n]
                    for d in range(2):
                        rows += [r, r]
                        cols += [ui[m, n, d], ui[j, n, d]]
                        vals += [-2 * delta[d] / dmin2, 2 * delta[d] / dmin2]
                    rhs.append(-(dmin2 + delta @ delta) / dmin2)
                    r += 1
        Acol = sp.csr_matrix((vals, (rows, cols)), shape=(r, nv))
        blocks.append(affine_block(Acol, np.array(rhs), "collision"))

    # loose box keeping the barrier bounded; never active at a sensible point
    pts = np.vstack([w, ur.reshape(-1, 2)])
    margin = max(scenario.max_speed * scenario.period / H, 1.0)
    lo, hi = pts.min(axis=0) - margin, pts.max(axis=0) + margin
    ucols = np.arange(lay.nu)
    coord = ucols % 2
    Abox = sp.vstack([sp.csr_matrix((np.ones(lay.nu) / margin, (ucols, ucols)), shape=(lay.nu, nv)),
                      sp.csr_matrix((-np.ones(lay.nu) / margin, (ucols, ucols)), shape=(lay.nu, nv))])
    blocks.append(affine_block(Abox, np.concatenate([hi[coord], -lo[coord]]) / margin, "box"))

    x0 = lay.pack(ur, dr, 0.0)
    x0[lay.eta] = float(user_average(x0).min()) - ETA_MARGIN
    e = np.zeros(nv)
    e[lay.eta] = 1.0
    prog = SmoothConvexProgram(linear_objective(e), blocks, x0,
                               {"positions": slice(0, lay.nu), "slacks": slice(lay.nu, lay.eta),
                                "eta": slice(lay.eta, lay.eta + 1)})
    return TrajectorySubproblem(prog, lay, H, user_average)


class TrajectoryStep(NamedTuple):
    trajectory: Trajectory
    eta: float
    surrogate_eta: float
    warning: str


def trajectory_is_feasible(scenario: Scenario, q: np.ndarray) -> bool:
    if not np.allclose(q[:, 0], q[:, -1], rtol=0, atol=EXACT_RTOL * max(1.0, np.abs(q).max())):
        return False
    hops = np.linalg.norm(np.diff(q, axis=1), axis=2)
    if np.any(hops > scenario.max_step * (1 + EXACT_RTOL)):
        return False
    d2min = scenario.min_separation ** 2 * (1 - SEPARATION_RTOL)
    for j in range(q.shape[0]):
        for m in range(j + 1, q.shape[0]):
            d = q[m] - q[j]
            if np.any(np.einsum("nd,nd->n", d, d) < d2min):
                return False
    return True


def solve_trajectory_block(scenario: Scenario, local: TrajectoryLocalPoint) -> TrajectoryStep:
    """One SCA step on the trajectory; never lowers the true max-min rate."""
    q_r = local.trajectory.waypoints
    if not trajectory_is_feasible(scenario, q_r):
        raise ValueError("expansion trajectory violates the trajectory constraints")
    eta_r = min_rate(scenario, local.schedule, local.trajectory, local.power)
    sub = build_trajectory_subproblem(scenario, local)
    try:
        out = solve_smooth(sub.program)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("trajectory subproblem failed: %s", exc)
        return TrajectoryStep(local.trajectory, eta_r, eta_r, f"solver error: {exc}")
    candidate = sub.trajectory(out.x)
    surrogate = sub.eta(out.x)
    if not trajectory_is_feasible(scenario, candidate.waypoints):
        log.warning("trajectory subproblem returned an infeasible point; step skipped")
        return TrajectoryStep(local.trajectory, eta_r, eta_r, "infeasible solver output")
    eta_new = min_rate(scenario, local.schedule, candidate, local.power)
    if eta_new < eta_r:
        return TrajectoryStep(local.trajectory, eta_r, eta_r, _rejection(out.status, eta_new, eta_r))
    warning = "" if out.status != NUMERIC_FAILURE else f"solver status {out.status}"
    return TrajectoryStep(candidate, eta_new, surrogate, warning)


def _rejection(status, eta_new, eta_r) -> str:
    if eta_r - eta_new <= REJECT_NOTE_RTOL * max(1.0, abs(eta_r)):
        return ""
    return f"step rejected ({status}): {eta_new:.12g} < {eta_r:.12g}"
