"""Reference schemes and analytic bounds."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import PowerProfile, Schedule, Scenario, log2_1p
from .planner import (BcdConfig, SolveReport, binarize, init_circular_trajectories, run_bcd,
                      static_trajectory)


class SchemeId(str, Enum):
    JOINT = "joint"
    NO_POWER_CONTROL = "no_power_control"
    CIRCULAR_FULL_POWER = "circular_full_power"
    STATIC_UAV = "static_uav"
    ORTHOGONAL = "orthogonal"


@dataclass
class SchemeResult:
    scheme: SchemeId
    report: SolveReport
    binary_schedule: Schedule
    eta_binary: float

    @property
    def eta_relaxed(self) -> float:
        return self.report.eta


def max_min_upper_bound(scenario: Scenario) -> float:
    """(1/K) log2(1 + P_max rho0 / (H^2 sigma^2)): one UAV hovering over
    every user in turn with no flight time."""
    return float(log2_1p(scenario.reference_snr)) / scenario.num_users


def orthogonal_mask(scenario: Scenario) -> np.ndarray:
    """(M, N) round-robin mask: UAV m may transmit only in slots n = m (mod M)."""
    M, N = scenario.num_uavs, scenario.num_slots
    if N % M:
        raise ValueError(f"orthogonal transmission needs N divisible by M (N={N}, M={M})")
    return (np.arange(N)[None, :] % M) == np.arange(M)[:, None]


def scheme_setup(scenario: Scenario, scheme, config: BcdConfig | None = None):
    """Initial trajectory, initial power and BCD switches for a scheme."""
    scheme = SchemeId(scheme)
    base = config or BcdConfig(convergence_threshold=scenario.convergence_threshold)
    full = PowerProfile.full(scenario)

    def cfg(**kw):
        params = dict(convergence_threshold=base.convergence_threshold,
                      max_iterations=base.max_iterations, optimize_trajectory=True,
                      optimize_power=True, mask=None)
        params.update(kw)
        return BcdConfig(**params)

    if scheme is SchemeId.STATIC_UAV:
        return static_trajectory(scenario), full, cfg(optimize_trajectory=False,
                                                     optimize_power=scenario.num_uavs > 1)
    traj, _ = init_circular_trajectories(scenario)
    if scheme is SchemeId.JOINT:
        return traj, full, cfg()
    if scheme is SchemeId.NO_POWER_CONTROL:
        return traj, full, cfg(optimize_power=False)
    if scheme is SchemeId.CIRCULAR_FULL_POWER:
        return traj, full, cfg(optimize_trajectory=False, optimize_power=False)
    mask = orthogonal_mask(scenario)
    return traj, PowerProfile(np.where(mask, full.levels, 0.0)), cfg(mask=mask)


def run_scheme(scenario: Scenario, scheme, config: BcdConfig | None = None,
               tau: int | None = None) -> SchemeResult:
    traj, power, cfg = scheme_setup(scenario, scheme, config)
    report = run_bcd(scenario, cfg, traj, power)
    binary, eta_binary = binarize(scenario, report, tau)
    return SchemeResult(SchemeId(scheme), report, binary, eta_binary)


def static_uav_scheme(scenario: Scenario, config: BcdConfig | None = None) -> SchemeResult:
    return run_scheme(scenario, SchemeId.STATIC_UAV, config)


def circular_scheme(scenario: Scenario, config: BcdConfig | None = None) -> SchemeResult:
    return run_scheme(scenario, SchemeId.CIRCULAR_FULL_POWER, config)


def orthogonal_scheme(scenario: Scenario, config: BcdConfig | None = None) -> SchemeResult:
    return run_scheme(scenario, SchemeId.ORTHOGONAL, config)


def access_delay(schedule: Schedule, period: float) -> np.ndarray:
    """Per-user longest cyclic wait between scheduled sub-slots, in seconds.

    A user never scheduled waits the whole period.
    """
    served = schedule.weights.sum(axis=1) > 0.5  # (K, N')
    K, n_sub = served.shape
    dt = period / n_sub
    out = np.full(K, float(period))
    for k in range(K):
        idx = np.nonzero(served[k])[0]
        if idx.size == 0:
            continue
        gaps = np.diff(np.append(idx, idx[0] + n_sub))
        out[k] = gaps.max() * dt
    return out
