"""Domain types and link-level arithmetic for the multi-UAV downlink.

All quantities are linear (watts, dimensionless gains); rates are spectral
efficiencies in bps/Hz. Slot indices are 0-based throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LN2 = math.log(2.0)

# separation is accepted down to d_min^2 * (1 - SEPARATION_RTOL)
SEPARATION_RTOL = 1e-6
# relative slack used for the "exact" speed / box / periodicity checks
EXACT_RTOL = 1e-9


class ScenarioError(ValueError):
    """Invalid scenario parameter; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def log2_1p(x):
    """``log2(1 + x)`` without cancellation for small ``x``."""
    return np.log1p(x) / LN2


def min_slots_for_accuracy(max_speed: float, period: float, altitude: float,
                           threshold: float) -> int:
    """Smallest N keeping the per-slot displacement below ``threshold * H``."""
    for name, value in (("max_speed", max_speed), ("period", period),
                        ("altitude", altitude), ("threshold", threshold)):
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value!r}")
    ratio = max_speed * period / (altitude * threshold)
    # guard against 210.00000000000003-style round-off pushing the ceiling up
    return int(math.ceil(round(ratio, 9)))


@dataclass(frozen=True)
class Scenario:
    """Immutable problem instance."""

    user_positions: np.ndarray
    num_uavs: int
    altitude: float = 100.0
    period: float = 90.0
    num_slots: int = 100
    max_speed: float = 50.0
    min_separation: float = 100.0
    max_power: float = 0.1
    noise_power: float = 1e-14
    ref_channel_gain: float = 1e-6
    discretization_threshold: float = 0.5
    convergence_threshold: float = 1e-4
    subslot_factor: int = 100

    def __post_init__(self):
        users = np.array(self.user_positions, dtype=float)
        if users.ndim != 2 or users.shape[1] != 2 or users.shape[0] < 1:
            raise ScenarioError("user_positions", "expected a non-empty list of 2D points")
        if not np.all(np.isfinite(users)):
            raise ScenarioError("user_positions", "coordinates must be finite")
        users.setflags(write=False)
        object.__setattr__(self, "user_positions", users)

        for name in ("num_uavs", "num_slots", "subslot_factor"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise ScenarioError(name, f"must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.num_uavs < 1:
            raise ScenarioError("num_uavs", "must be >= 1")
        if self.num_slots < 2:
            raise ScenarioError("num_slots", "must be >= 2")
        if self.subslot_factor < 1:
            raise ScenarioError("subslot_factor", "must be >= 1")
        for name in ("altitude", "period", "max_speed", "min_separation", "max_power",
                     "noise_power", "ref_channel_gain", "discretization_threshold",
                     "convergence_threshold"):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and value > 0):
                raise ScenarioError(name, f"must be a positive finite number, got {value!r}")
            object.__setattr__(self, name, value)

        needed = min_slots_for_accuracy(self.max_speed, self.period, self.altitude,
                                        self.discretization_threshold)
        if self.num_slots < needed:
            raise ScenarioError(
                "num_slots",
                f"{self.num_slots} slots give S_max/H above {self.discretization_threshold}; "
                f"need at least {needed}")

    @property
    def num_users(self) -> int:
        return self.user_positions.shape[0]

    @property
    def slot_length(self) -> float:
        return self.period / self.num_slots

    @property
    def max_step(self) -> float:
        """Largest horizontal displacement per slot (S_max)."""
        return self.max_speed * self.slot_length

    @property
    def reference_snr(self) -> float:
        """SNR of a full-power UAV hovering right above a user."""
        return self.max_power * self.ref_channel_gain / (self.altitude ** 2 * self.noise_power)

    def replace(self, **changes) -> "Scenario":
        params = {name: getattr(self, name) for name in self.__dataclass_fields__}
        params.update(changes)
        return Scenario(**params)


@dataclass(frozen=True)
class Trajectory:
    """Waypoints ``q_m[n]`` as an (M, N, 2) array in meters."""

    waypoints: np.ndarray

    def __post_init__(self):
        q = np.array(self.waypoints, dtype=float)
        if q.ndim != 3 or q.shape[2] != 2:
            raise ValueError(f"waypoints must have shape (M, N, 2), got {q.shape}")
        q.setflags(write=False)
        object.__setattr__(self, "waypoints", q)

    @property
    def num_uavs(self) -> int:
        return self.waypoints.shape[0]

    @property
    def num_slots(self) -> int:
        return self.waypoints.shape[1]


@dataclass(frozen=True)
class PowerProfile:
    """Transmit powers ``p_m[n]`` as an (M, N) array in watts."""

    levels: np.ndarray

    def __post_init__(self):
        p = np.array(self.levels, dtype=float)
        if p.ndim != 2:
            raise ValueError(f"levels must have shape (M, N), got {p.shape}")
        p.setflags(write=False)
        object.__setattr__(self, "levels", p)

    @classmethod
    def full(cls, scenario: Scenario) -> "PowerProfile":
        return cls(np.full((scenario.num_uavs, scenario.num_slots), scenario.max_power))


@dataclass(frozen=True)
class Schedule:
    """Association weights ``alpha_{k,m}[n]`` as a (K, M, N') array.

    N' is either the scenario's slot count or a multiple of it (sub-slots).
    """

    weights: np.ndarray
    binary: bool = False

    def __post_init__(self):
        a = np.array(self.weights, dtype=float)
        if a.ndim != 3:
            raise ValueError(f"weights must have shape (K, M, N), got {a.shape}")
        a.setflags(write=False)
        object.__setattr__(self, "weights", a)

    @property
    def num_slots(self) -> int:
        return self.weights.shape[2]

    def as_relaxed(self) -> "Schedule":
        return Schedule(self.weights, binary=False)


@dataclass(frozen=True)
class RateReport:
    per_slot_rates: np.ndarray
    average_rates: np.ndarray
    min_rate: float


@dataclass(frozen=True)
class Violation:
    """One breached constraint. ``indices`` are 0-based."""

    kind: str
    indices: tuple
    magnitude: float
    detail: str = field(default="", compare=False)

    def __str__(self):
        return f"{self.kind}{self.indices}: {self.detail or self.magnitude}"


# ---------------------------------------------------------------------------
# link arithmetic


def _check_user(scenario: Scenario, user_index: int) -> None:
    if not 0 <= user_index < scenario.num_users:
        raise IndexError(f"user index {user_index} outside [0, {scenario.num_users})")


def channel_gain(scenario: Scenario, uav_pos, user_index: int) -> float:
    """Free-space LoS power gain between a UAV at ``uav_pos`` and a user."""
    _check_user(scenario, user_index)
    delta = np.asarray(uav_pos, dtype=float) - scenario.user_positions[user_index]
    return scenario.ref_channel_gain / (scenario.altitude ** 2 + float(delta @ delta))


def gain_table(scenario: Scenario, trajectory: Trajectory) -> np.ndarray:
    """Channel gains ``h_{k,m}[n]`` as a (K, M, N) array."""
    diff = trajectory.waypoints[None, :, :, :] - scenario.user_positions[:, None, None, :]
    dist2 = np.einsum("kmnd,kmnd->kmn", diff, diff)
    return scenario.ref_channel_gain / (scenario.altitude ** 2 + dist2)


def sinr_table(scenario: Scenario, trajectory: Trajectory, power: PowerProfile) -> np.ndarray:
    """SINR ``gamma_{k,m}[n]`` for every (user, UAV, slot), shape (K, M, N)."""
    h = gain_table(scenario, trajectory)
    received = h * power.levels[None, :, :]
    m = received.shape[1]
    # explicit off-diagonal sum keeps the interference exactly zero when
    # every other UAV is silent
    others = np.ones((m, m)) - np.eye(m)
    interference = np.einsum("kjn,mj->kmn", received, others)
    return received / (interference + scenario.noise_power)


def sinr(scenario: Scenario, trajectory: Trajectory, power: PowerProfile,
         user_index: int, uav_index: int, slot: int) -> float:
    _check_user(scenario, user_index)
    if not 0 <= uav_index < trajectory.num_uavs:
        raise IndexError(f"uav index {uav_index} out of range")
    if not 0 <= slot < trajectory.num_slots:
        raise IndexError(f"slot {slot} out of range")
    q = trajectory.waypoints[:, slot, :]
    p = power.levels[:, slot]
    own = p[uav_index] * channel_gain(scenario, q[uav_index], user_index)
    interference = sum(p[j] * channel_gain(scenario, q[j], user_index)
                       for j in range(len(p)) if j != uav_index)
    return own / (interference + scenario.noise_power)


def rate_table(scenario: Scenario, trajectory: Trajectory, power: PowerProfile) -> np.ndarray:
    """``log2(1 + gamma_{k,m}[n])``, shape (K, M, N)."""
    return log2_1p(sinr_table(scenario, trajectory, power))


def _check_shapes(scenario, schedule, trajectory, power):
    k, m, n = scenario.num_users, scenario.num_uavs, scenario.num_slots
    if trajectory.waypoints.shape != (m, n, 2):
        raise ValueError(f"trajectory shape {trajectory.waypoints.shape} != {(m, n, 2)}")
    if power.levels.shape != (m, n):
        raise ValueError(f"power shape {power.levels.shape} != {(m, n)}")
    ks, ms, ns = schedule.weights.shape
    if (ks, ms) != (k, m) or ns % n:
        raise ValueError(f"schedule shape {schedule.weights.shape} incompatible with "
                         f"K={k}, M={m}, N={n}")
    return ns // n


def expand_slots(table: np.ndarray, factor: int) -> np.ndarray:
    """Repeat the trailing slot axis so each slot covers ``factor`` sub-slots."""
    return np.repeat(table, factor, axis=-1) if factor > 1 else table


def evaluate_rates(scenario: Scenario, schedule: Schedule, trajectory: Trajectory,
                   power: PowerProfile) -> RateReport:
    """Per-slot, average and minimum user rates.

    Schedules over ``tau * N`` sub-slots are evaluated with each sub-slot
    inheriting the position and power of its parent slot.
    """
    factor = _check_shapes(scenario, schedule, trajectory, power)
    rates = expand_slots(rate_table(scenario, trajectory, power), factor)
    per_slot = np.einsum("kmn,kmn->kn", schedule.weights, rates)
    average = per_slot.mean(axis=1)
    return RateReport(per_slot, average, float(average.min()))


def min_rate(scenario, schedule, trajectory, power) -> float:
    return evaluate_rates(scenario, schedule, trajectory, power).min_rate


def validate_feasibility(scenario: Scenario, schedule: Schedule, trajectory: Trajectory,
                         power: PowerProfile) -> list[Violation]:
    """All constraint breaches of the (relaxed or binary) problem; empty if feasible."""
    _check_shapes(scenario, schedule, trajectory, power)
    out: list[Violation] = []
    q = trajectory.waypoints
    m_count, n_count = q.shape[:2]
    scale = max(1.0, float(np.abs(q).max()))

    for m in range(m_count):
        gap = float(np.linalg.norm(q[m, 0] - q[m, -1]))
        if gap > EXACT_RTOL * scale:
            out.append(Violation("periodicity", (m,), gap, f"start/end differ by {gap:.6g} m"))

    s_max = scenario.max_step
    hops = np.linalg.norm(np.diff(q, axis=1), axis=2)
    for m, n in zip(*np.nonzero(hops > s_max * (1 + EXACT_RTOL))):
        excess = float(hops[m, n] - s_max)
        out.append(Violation("speed", (int(m), int(n)), excess,
                             f"hop {n}->{n + 1} is {hops[m, n]:.6g} m > S_max={s_max:.6g} m"))

    d_min = scenario.min_separation
    for j in range(m_count):
        for m in range(j + 1, m_count):
            dist = np.linalg.norm(q[m] - q[j], axis=1)
            for n in np.nonzero(dist ** 2 < d_min ** 2 * (1 - SEPARATION_RTOL))[0]:
                out.append(Violation("separation", (j, m, int(n)), float(d_min - dist[n]),
                                     f"distance {dist[n]:.6g} m < d_min={d_min:.6g} m"))

    p = power.levels
    p_max = scenario.max_power
    bad = (p < -EXACT_RTOL * p_max) | (p > p_max * (1 + EXACT_RTOL)) | ~np.isfinite(p)
    for m, n in zip(*np.nonzero(bad)):
        value = float(p[m, n])
        excess = value - p_max if value > p_max else -value
        out.append(Violation("power_box", (int(m), int(n)), excess,
                             f"power {value:.6g} W outside [0, {p_max:.6g}]"))

    a = schedule.weights
    tol = EXACT_RTOL
    for k, m, n in zip(*np.nonzero((a < -tol) | (a > 1 + tol) | ~np.isfinite(a))):
        out.append(Violation("schedule_range", (int(k), int(m), int(n)), float(a[k, m, n])))
    if schedule.binary:
        frac = np.abs(a - np.round(a))
        for k, m, n in zip(*np.nonzero(frac > tol)):
            out.append(Violation("schedule_binary", (int(k), int(m), int(n)),
                                 float(frac[k, m, n])))
    per_uav = a.sum(axis=0)
    for m, n in zip(*np.nonzero(per_uav > 1 + tol)):
        out.append(Violation("uav_load", (int(m), int(n)), float(per_uav[m, n] - 1),
                             f"UAV serves total weight {per_uav[m, n]:.6g}"))
    per_user = a.sum(axis=1)
    for k, n in zip(*np.nonzero(per_user > 1 + tol)):
        out.append(Violation("user_load", (int(k), int(n)), float(per_user[k, n] - 1),
                             f"user served with total weight {per_user[k, n]:.6g}"))
    return out
