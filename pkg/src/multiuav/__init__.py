"""Max-min fair rate planning for multi-UAV downlinks: joint user scheduling,
trajectory and transmit power design by block coordinate descent."""

from .baselines import SchemeId, access_delay, max_min_upper_bound, run_scheme
from .model import (PowerProfile, Schedule, Scenario, ScenarioError, Trajectory, evaluate_rates,
                    validate_feasibility)
from .planner import BcdConfig, SolveReport, init_circular_trajectories, run_bcd

__all__ = [
    "SchemeId", "access_delay", "max_min_upper_bound", "run_scheme", "PowerProfile",
    "Schedule", "Scenario", "ScenarioError", "Trajectory", "evaluate_rates",
    "validate_feasibility", "BcdConfig", "SolveReport", "init_circular_trajectories", "run_bcd",
]
