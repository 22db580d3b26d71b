"""Block coordinate descent driver, circular initialization and binary
schedule reconstruction."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .model import (PowerProfile, Schedule, Scenario, Trajectory, min_rate,
                    validate_feasibility)
from .power import PowerLocalPoint, solve_power_block
from .scheduling import SchedulingError, build_scheduling_lp, solve_scheduling
from .trajectory import TrajectoryLocalPoint, solve_trajectory_block

log = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-9
MAX_PACKED_UAVS = 5


class UnsupportedConfiguration(ValueError):
    pass


@dataclass(frozen=True)
class BcdConfig:
    """Stopping rule and block switches; scheduling always runs.

    ``mask`` is an optional (M, N) boolean array of UAV-slots allowed to
    transmit; masked UAV-slots carry zero power and no schedule weight.
    """

    convergence_threshold: float = 1e-4
    max_iterations: int = 100
    optimize_trajectory: bool = True
    optimize_power: bool = True
    mask: np.ndarray | None = None

    def __post_init__(self):
        if not self.convergence_threshold > 0:
            raise ValueError("convergence_threshold must be > 0")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ValueError("max_iterations must be an integer >= 1")


@dataclass
class SolveReport:
    trace: list[float]
    lp_trace: list[float]
    block_deltas: list[dict]
    schedule: Schedule
    trajectory: Trajectory
    power: PowerProfile
    converged: bool
    block_times: dict = field(default_factory=lambda: {"scheduling": 0.0, "trajectory": 0.0,
                                                        "power": 0.0})
    warnings: list[str] = field(default_factory=list)
    error: str = ""

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def eta(self) -> float:
        return self.trace[-1] if self.trace else float("nan")


@dataclass(frozen=True)
class InitTrajectorySpec:
    center: np.ndarray
    cover_radius: float
    packing_radius: float
    circle_centers: np.ndarray
    radius: float
    angles: np.ndarray


def packing_ratio(num_circles: int) -> float:
    """Radius of M equal circles packed in a unit circle (M <= 5)."""
    if num_circles < 1 or num_circles > MAX_PACKED_UAVS:
        raise UnsupportedConfiguration(
            f"circle packing is tabulated for 1..{MAX_PACKED_UAVS} UAVs, got {num_circles}")
    if num_circles == 1:
        return 1.0
    s = math.sin(math.pi / num_circles)
    return s / (1.0 + s)


def packing_centers(num_circles: int) -> np.ndarray:
    """Circle centers of the unit-circle packing; the first lies on +x."""
    ratio = packing_ratio(num_circles)
    if num_circles == 1:
        return np.zeros((1, 2))
    ang = 2 * np.pi * np.arange(num_circles) / num_circles
    return (1.0 - ratio) * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _packing(scenario: Scenario):
    users = scenario.user_positions
    M = scenario.num_uavs
    c_g = users.mean(axis=0)
    r_u = float(np.max(np.linalg.norm(users - c_g, axis=1)))
    ratio = packing_ratio(M)
    if M > 1 and ratio * r_u < scenario.min_separation:
        # feasibility repair: enlarge the cover disk until r_cp >= d_min
        r_u = scenario.min_separation / ratio
    centers = c_g + r_u * packing_centers(M)
    return c_g, r_u, ratio * r_u, centers


def circle_radius_limit(scenario: Scenario) -> float:
    """Largest radius whose sampled circle respects both the period and S_max."""
    N = scenario.num_slots
    r_max = scenario.max_speed * scenario.period / (2 * np.pi)
    # chord between consecutive samples must not exceed S_max
    r_chord = scenario.max_step / (2 * math.sin(math.pi / (N - 1))) if N > 2 else np.inf
    return min(r_max, r_chord)


def init_circular_trajectories(scenario: Scenario) -> tuple[Trajectory, InitTrajectorySpec]:
    c_g, r_u, r_cp, centers = _packing(scenario)
    N = scenario.num_slots
    r_trj = min(circle_radius_limit(scenario), r_cp / 2)
    theta = 2 * np.pi * np.arange(N) / (N - 1)
    ring = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    q = centers[:, None, :] + r_trj * ring[None]
    q[:, -1] = q[:, 0]  # exact periodicity
    spec = InitTrajectorySpec(c_g, r_u, r_cp, centers, r_trj, theta)
    return Trajectory(q), spec


def static_trajectory(scenario: Scenario) -> Trajectory:
    """Every UAV parked at its packing center for the whole period."""
    _, _, _, centers = _packing(scenario)
    q = np.repeat(centers[:, None, :], scenario.num_slots, axis=1)
    return Trajectory(q)


def run_bcd(scenario: Scenario, config: BcdConfig, initial_trajectory: Trajectory,
            initial_power: PowerProfile) -> SolveReport:
    """Alternate scheduling, trajectory and power blocks until the relaxed
    objective stops improving."""
    M, N = scenario.num_uavs, scenario.num_slots
    mask = None if config.mask is None else np.asarray(config.mask, dtype=bool)
    if mask is not None and mask.shape != (M, N):
        raise ValueError(f"mask shape {mask.shape} != {(M, N)}")
    traj = initial_trajectory
    power = initial_power
    if mask is not None:
        power = PowerProfile(np.where(mask, power.levels, 0.0))
    violations = [v for v in validate_feasibility(
        scenario, Schedule(np.zeros((scenario.num_users, M, N))), traj, power)]
    if violations:
        raise ValueError("initial point infeasible: " + "; ".join(map(str, violations[:3])))

    report = SolveReport([], [], [], Schedule(np.zeros((scenario.num_users, M, N))), traj,
                         power, False)
    times = report.block_times
    for r in range(config.max_iterations):
        deltas = {}
        t0 = time.perf_counter()
        try:
            schedule, eta_lp = solve_scheduling(build_scheduling_lp(scenario, traj, power, mask))
        except SchedulingError as exc:
            report.error = str(exc)
            log.error("BCD aborted: %s", exc)
            break
        times["scheduling"] += time.perf_counter() - t0
        eta = min_rate(scenario, schedule, traj, power)
        deltas["scheduling"] = eta - (report.trace[-1] if report.trace else 0.0)

        if config.optimize_trajectory:
            t0 = time.perf_counter()
            try:
                step = solve_trajectory_block(scenario, TrajectoryLocalPoint(traj, schedule, power))
            except ValueError as exc:
                report.error = str(exc)
                log.error("BCD aborted: %s", exc)
                break
            times["trajectory"] += time.perf_counter() - t0
            deltas["trajectory"] = step.eta - eta
            traj, eta = step.trajectory, step.eta
            if step.warning:
                report.warnings.append(f"iteration {r}: trajectory: {step.warning}")

        if config.optimize_power:
            t0 = time.perf_counter()
            step = solve_power_block(scenario, PowerLocalPoint(power, schedule, traj), mask)
            times["power"] += time.perf_counter() - t0
            deltas["power"] = step.eta - eta
            power, eta = step.power, step.eta
            if step.warning:
                report.warnings.append(f"iteration {r}: power: {step.warning}")

        if report.trace and eta < report.trace[-1] - MONOTONE_SLACK:
            report.warnings.append(f"iteration {r}: objective decreased by "
                                   f"{report.trace[-1] - eta:.3g}")
        report.schedule, report.trajectory, report.power = schedule, traj, power
        report.trace.append(eta)
        report.block_deltas.append(deltas)
        prev = report.lp_trace[-1] if report.lp_trace else None
        report.lp_trace.append(eta_lp)
        if prev is not None and _converged(prev, eta_lp, config.convergence_threshold):
            report.converged = True
            break
    return report


def _converged(prev: float, new: float, eps: float) -> bool:
    if prev <= 0.0:
        return new <= 0.0
    return (new - prev) / prev < eps


def _round_counts(alpha_slot, tau):
    """Sub-slot counts per (k, m) for one slot, capped at tau per UAV and user."""
    scaled = tau * alpha_slot
    counts = np.floor(scaled + 0.5).astype(int)
    for axis in (0, 1):  # axis 0: per-UAV totals, axis 1: per-user totals
        while True:
            totals = counts.sum(axis=axis)
            over = np.nonzero(totals > tau)[0]
            if over.size == 0:
                break
            for i in over:
                line = counts[:, i] if axis == 0 else counts[i, :]
                target = scaled[:, i] if axis == 0 else scaled[i, :]
                excess = int(line.sum() - tau)
                # take from the entries rounded up the most first
                order = sorted(np.nonzero(line > 0)[0], key=lambda j: (target[j] - line[j], j))
                for j in order[:excess]:
                    line[j] -= 1
    return counts


def _contiguous(counts, alpha_slot, tau):
    """Per-UAV contiguous placement, users by descending weight; None on clash."""
    K, M = counts.shape
    table = np.full((M, tau), -1)
    for m in range(M):
        pos = 0
        for k in sorted(range(K), key=lambda k: (-alpha_slot[k, m], k)):
            table[m, pos:pos + counts[k, m]] = k
            pos += counts[k, m]
    for s in range(tau):
        users = table[:, s][table[:, s] >= 0]
        if users.size != np.unique(users).size:
            return None
    return table


def _edge_coloring(counts, tau):
    """Bipartite multigraph edge coloring with tau colors (Konig), via Kempe
    chain swaps. Returns a (M, tau) table of users (-1 for idle)."""
    K, M = counts.shape
    user_color = [dict() for _ in range(K)]  # color -> uav
    uav_color = [dict() for _ in range(M)]  # color -> user
    for k in range(K):
        for m in range(M):
            for _ in range(int(counts[k, m])):
                a = next(c for c in range(tau) if c not in user_color[k])
                b = next(c for c in range(tau) if c not in uav_color[m])
                if a != b and a in uav_color[m]:
                    # swap colors a/b along the alternating path starting at uav m
                    path = []
                    node, side, col = m, "uav", a
                    while True:
                        nxt = (uav_color[node] if side == "uav" else user_color[node]).get(col)
                        if nxt is None:
                            break
                        path.append((node, nxt, col) if side == "uav" else (nxt, node, col))
                        node, side = nxt, ("user" if side == "uav" else "uav")
                        col = b if col == a else a
                    for mm, kk, c in path:
                        del uav_color[mm][c]
                        del user_color[kk][c]
                    for mm, kk, c in path:
                        c2 = b if c == a else a
                        uav_color[mm][c2] = kk
                        user_color[kk][c2] = mm
                user_color[k][a] = m
                uav_color[m][a] = k
    table = np.full((M, tau), -1)
    for m in range(M):
        for c, k in uav_color[m].items():
            table[m, c] = k
    return table


def reconstruct_binary_schedule(schedule: Schedule, tau: int) -> Schedule:
    """Round a relaxed schedule onto tau sub-slots per slot."""
    if int(tau) != tau or tau < 1:
        raise ValueError(f"subslot factor must be a positive integer, got {tau!r}")
    tau = int(tau)
    a = schedule.weights
    K, M, N = a.shape
    out = np.zeros((K, M, N * tau))
    for n in range(N):
        counts = _round_counts(a[:, :, n], tau)
        table = _contiguous(counts, a[:, :, n], tau)
        if table is None:
            table = _edge_coloring(counts, tau)
        for m in range(M):
            for s in np.nonzero(table[m] >= 0)[0]:
                out[table[m, s], m, n * tau + s] = 1.0
    return Schedule(out, binary=True)


def binarize(scenario: Scenario, report: SolveReport, tau: int | None = None):
    """Binary schedule for a finished run and its min-rate over the sub-slots."""
    tau = scenario.subslot_factor if tau is None else tau
    binary = reconstruct_binary_schedule(report.schedule, tau)
    return binary, min_rate(scenario, binary, report.trajectory, report.power)
