import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multiuav.baselines import SchemeId, run_scheme
from multiuav.model import (PowerProfile, Schedule, Scenario, evaluate_rates, min_rate,
                            validate_feasibility)
from multiuav.planner import (BcdConfig, UnsupportedConfiguration, circle_radius_limit,
                              init_circular_trajectories, packing_centers, packing_ratio,
                              reconstruct_binary_schedule, run_bcd)
from multiuav.scheduling import build_scheduling_lp, solve_scheduling

from conftest import HOVER_RATE, random_scenario


def test_single_uav_circle_is_centered():
    sc = random_scenario(0, num_users=4, num_uavs=1, period=60.0, num_slots=60)
    traj, spec = init_circular_trajectories(sc)
    assert spec.circle_centers[0] == pytest.approx(sc.user_positions.mean(axis=0))
    assert spec.packing_radius == pytest.approx(spec.cover_radius)
    r = np.linalg.norm(traj.waypoints[0] - spec.center, axis=1)
    assert r == pytest.approx(np.full(60, spec.radius))
    assert np.array_equal(traj.waypoints[0, 0], traj.waypoints[0, -1])


def test_two_uav_packing_halves_the_disk():
    users = [[-800.0, 0.0], [800.0, 0.0], [0.0, 300.0]]
    sc = Scenario(users, num_uavs=2, period=40.0, num_slots=40, discretization_threshold=2.0)
    _, spec = init_circular_trajectories(sc)
    c_g = np.mean(users, axis=0)
    r_u = max(np.linalg.norm(np.array(users) - c_g, axis=1))
    assert spec.packing_radius == pytest.approx(r_u / 2)
    assert spec.circle_centers[0] == pytest.approx(c_g + [r_u / 2, 0])
    assert spec.circle_centers[1] == pytest.approx(c_g - [r_u / 2, 0])


def test_speed_radius_limit():
    sc = Scenario([[0.0, 0.0]], num_uavs=1, period=210.0, num_slots=210)
    assert sc.max_speed * sc.period / (2 * math.pi) == pytest.approx(1671.1, abs=0.05)
    assert circle_radius_limit(sc) <= 1671.1


@pytest.mark.parametrize("M, ratio", [(1, 1.0), (2, 0.5), (3, 2 * math.sqrt(3) - 3),
                                      (4, math.sqrt(2) - 1), (5, 0.37019)])
def test_packing_table(M, ratio):
    assert packing_ratio(M) == pytest.approx(ratio, abs=1e-5)
    c = packing_centers(M)
    r = packing_ratio(M)
    # inside the unit disk and non-overlapping
    assert np.all(np.linalg.norm(c, axis=1) + r <= 1 + 1e-12)
    for i in range(M):
        for j in range(i + 1, M):
            assert np.linalg.norm(c[i] - c[j]) >= 2 * r - 1e-12
    if M > 1:
        assert c[0, 1] == pytest.approx(0.0) and c[0, 0] > 0


def test_packing_rejects_large_fleets():
    with pytest.raises(UnsupportedConfiguration):
        packing_ratio(6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.floats(10.0, 120.0))
def test_initial_trajectories_feasible(seed, M, period):
    N = int(math.ceil(period / M) * M)
    sc = random_scenario(seed, num_users=4, num_uavs=M, period=period, num_slots=N,
                         half_width=300.0, discretization_threshold=1.0)
    traj, spec = init_circular_trajectories(sc)
    assert spec.radius <= min(sc.max_speed * sc.period / (2 * math.pi), spec.packing_radius / 2)
    sched = Schedule(np.zeros((sc.num_users, M, N)))
    assert validate_feasibility(sc, sched, traj, PowerProfile.full(sc)) == []


def desk(seed=0, **kw):
    params = dict(num_users=3, num_uavs=2, period=20.0, num_slots=20, discretization_threshold=2.0)
    params.update(kw)
    return random_scenario(seed, **params)


@pytest.mark.parametrize("seed", range(2))
def test_bcd_trace_monotone_and_feasible(seed):
    sc = desk(seed)
    traj, _ = init_circular_trajectories(sc)
    rep = run_bcd(sc, BcdConfig(max_iterations=30), traj, PowerProfile.full(sc))
    assert rep.converged and rep.iterations <= 30
    assert not rep.error
    assert np.all(np.diff(rep.trace) >= -1e-9)
    assert validate_feasibility(sc, rep.schedule, rep.trajectory, rep.power) == []
    assert rep.eta == pytest.approx(min_rate(sc, rep.schedule, rep.trajectory, rep.power))
    assert set(rep.block_times) == {"scheduling", "trajectory", "power"}


def test_ablation_reproduces_circular_baseline():
    sc = desk(1)
    traj, _ = init_circular_trajectories(sc)
    power = PowerProfile.full(sc)
    cfg = BcdConfig(optimize_trajectory=False, optimize_power=False)
    rep = run_bcd(sc, cfg, traj, power)
    _, eta = solve_scheduling(build_scheduling_lp(sc, traj, power))
    assert rep.eta == pytest.approx(eta, abs=1e-12)
    assert np.array_equal(rep.trajectory.waypoints, traj.waypoints)
    assert rep.iterations == 2  # second pass confirms zero improvement


def test_rejects_infeasible_start():
    sc = desk(0)
    traj, _ = init_circular_trajectories(sc)
    with pytest.raises(ValueError):
        run_bcd(sc, BcdConfig(), traj, PowerProfile.full(sc).__class__(
            np.full((2, sc.num_slots), 2 * sc.max_power)))


def test_single_user_hover_bound():
    sc = Scenario([[0.0, 0.0]], num_uavs=1, period=40.0, num_slots=40, discretization_threshold=2.0)
    res = run_scheme(sc, SchemeId.JOINT)
    assert res.report.eta >= 0.98 * HOVER_RATE
    assert res.report.eta <= HOVER_RATE + 1e-9


def _one_slot(a1, a2):
    w = np.zeros((2, 1, 1))
    w[:, 0, 0] = [a1, a2]
    return Schedule(w)


@pytest.mark.parametrize("tau, expected", [(10, (7, 3)), (100, (69, 31))])
def test_rounding_examples(tau, expected):
    out = reconstruct_binary_schedule(_one_slot(0.69, 0.31), tau)
    assert tuple(out.weights.sum(axis=2)[:, 0].astype(int)) == expected
    # contiguous, larger share first
    assert np.all(out.weights[0, 0, :expected[0]] == 1)


def test_binary_schedule_replicated():
    rng = np.random.default_rng(3)
    w = np.zeros((3, 2, 4))
    for n in range(4):
        perm = rng.permutation(3)
        w[perm[0], 0, n] = w[perm[1], 1, n] = 1.0
    out = reconstruct_binary_schedule(Schedule(w), 5)
    assert np.array_equal(out.weights, np.repeat(w, 5, axis=2))


def test_zero_tau_rejected():
    with pytest.raises(ValueError):
        reconstruct_binary_schedule(_one_slot(0.5, 0.5), 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 5), st.integers(1, 3), st.integers(1, 20))
def test_reconstruction_feasible(seed, K, M, tau):
    rng = np.random.default_rng(seed)
    a = rng.random((K, M, 3))
    for _ in range(3):
        a /= np.maximum(1, a.sum(axis=0, keepdims=True))
        a /= np.maximum(1, a.sum(axis=1, keepdims=True))
    out = reconstruct_binary_schedule(Schedule(a), tau).weights
    assert set(np.unique(out)) <= {0.0, 1.0}
    assert np.all(out.sum(axis=0) <= 1) and np.all(out.sum(axis=1) <= 1)
    counts = out.reshape(K, M, 3, tau).sum(axis=3)
    assert np.all(np.abs(counts - tau * a) <= 1.0 + 1e-9)


def test_edge_coloring_fallback_handles_clashes():
    # contiguous placement clashes: user 0 leads on both UAVs
    a = np.array([[[0.5], [0.5]], [[0.5], [0.0]], [[0.0], [0.5]]])
    out = reconstruct_binary_schedule(Schedule(a), 2).weights
    assert np.all(out.sum(axis=1) <= 1) and np.all(out.sum(axis=0) <= 1)
    assert np.array_equal(out.sum(axis=2)[:, :], np.array([[1, 1], [1, 0], [0, 1]]))


def test_binary_gap_small_at_tau_100():
    sc = desk(2, num_users=4)
    res = run_scheme(sc, SchemeId.NO_POWER_CONTROL, BcdConfig(max_iterations=10))
    relaxed = res.report.eta
    assert res.eta_binary >= relaxed * (1 - 0.01)
    rep = res.report
    assert validate_feasibility(sc, res.binary_schedule, rep.trajectory, rep.power) == []
    assert res.eta_binary == pytest.approx(
        evaluate_rates(sc, res.binary_schedule, rep.trajectory, rep.power).min_rate)
