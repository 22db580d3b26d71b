import numpy as np
import pytest
import scipy.optimize as so
from hypothesis import given, settings, strategies as st

from multiuav.model import PowerProfile, Schedule, Trajectory, min_rate, validate_feasibility
from multiuav.planner import init_circular_trajectories
from multiuav.scheduling import SchedulingProblem, build_scheduling_lp, solve_scheduling

from conftest import random_scenario


def solve(rates, mask=None):
    return solve_scheduling(SchedulingProblem(np.asarray(rates, dtype=float), mask))


def highs_value(rates, mask=None):
    """Same LP through scipy's HiGHS as an independent oracle."""
    K, M, N = rates.shape
    nv = K * M * N + 1
    idx = np.arange(K * M * N).reshape(K, M, N)
    A, b = [], []
    for k in range(K):
        row = np.zeros(nv); row[idx[k].ravel()] = -rates[k].ravel() / N; row[-1] = 1
        A.append(row); b.append(0)
    for m in range(M):
        for n in range(N):
            row = np.zeros(nv); row[idx[:, m, n]] = 1; A.append(row); b.append(1)
    for k in range(K):
        for n in range(N):
            row = np.zeros(nv); row[idx[k, :, n]] = 1; A.append(row); b.append(1)
    ub = np.ones(nv)
    ub[-1] = np.inf
    if mask is not None:
        ub[:-1][~np.broadcast_to(mask[None], rates.shape).ravel()] = 0
    c = np.zeros(nv); c[-1] = -1
    res = so.linprog(c, A_ub=np.array(A), b_ub=b, bounds=list(zip(np.zeros(nv), ub)),
                     method="highs")
    return -res.fun


def test_single_user_gets_every_slot():
    rates = np.full((1, 1, 5), 3.0)
    sched, eta = solve(rates)
    assert np.allclose(sched.weights, 1.0)
    assert eta == pytest.approx(3.0)


def test_two_users_one_uav_closed_form():
    rates = np.array([[[2.0]], [[1.0]]])
    sched, eta = solve(rates)
    assert sched.weights[:, 0, 0] == pytest.approx([1 / 3, 2 / 3], abs=1e-10)
    assert eta == pytest.approx(2 / 3, abs=1e-10)


def test_diagonal_rates_pair_each_user_with_its_uav():
    rates = np.zeros((2, 2, 3))
    rates[0, 0] = 4.0
    rates[1, 1] = 2.0
    sched, eta = solve(rates)
    assert eta == pytest.approx(2.0)
    assert np.allclose(sched.weights[0, 0], 1.0) and np.allclose(sched.weights[1, 1], 1.0)


def test_zero_rate_table_gives_zero():
    sched, eta = solve(np.zeros((3, 2, 4)))
    assert eta == 0.0
    assert np.all(sched.weights == 0)


def test_mask_blocks_weights():
    rng = np.random.default_rng(1)
    rates = rng.uniform(0.5, 3, (3, 2, 4))
    mask = np.array([[True, False, True, False], [False, True, False, True]])
    sched, eta = solve(rates, mask)
    assert np.all(sched.weights[:, ~mask] == 0)
    assert eta == pytest.approx(highs_value(rates, mask), abs=1e-8)


def test_rejects_bad_tables():
    with pytest.raises(ValueError):
        SchedulingProblem(np.full((2, 2), 1.0))
    with pytest.raises(ValueError):
        SchedulingProblem(np.full((1, 1, 2), -1.0))
    with pytest.raises(ValueError):
        SchedulingProblem(np.full((1, 1, 2), np.nan))


rate_tables = st.tuples(st.integers(1, 4), st.integers(1, 3), st.integers(1, 5),
                        st.integers(0, 10_000))


def _table(params):
    K, M, N, seed = params
    rng = np.random.default_rng(seed)
    r = rng.uniform(0, 5, (K, M, N))
    r[rng.random(r.shape) < 0.2] = 0.0
    return r


@settings(max_examples=60, deadline=None)
@given(rate_tables)
def test_optimum_matches_highs_and_is_self_consistent(params):
    r = _table(params)
    sched, eta = solve(r)
    a = sched.weights
    K, M, N = r.shape
    assert np.all(a >= 0) and np.all(a <= 1)
    assert np.all(a.sum(axis=0) <= 1 + 1e-12)
    assert np.all(a.sum(axis=1) <= 1 + 1e-12)
    user_rates = np.einsum("kmn,kmn->k", a, r) / N
    assert eta == pytest.approx(user_rates.min(), abs=1e-12)
    if np.any(r > 0):
        assert eta == pytest.approx(highs_value(r), abs=1e-7 * max(1, eta))


@settings(max_examples=40, deadline=None)
@given(rate_tables, st.floats(1.0, 3.0))
def test_eta_monotone_in_rates(params, factor):
    r = _table(params)
    bump = np.random.default_rng(params[3] + 1).uniform(1.0, factor, r.shape)
    _, eta = solve(r)
    _, eta_up = solve(r * bump)
    assert eta_up >= eta - 1e-9


@settings(max_examples=30, deadline=None)
@given(rate_tables)
def test_optimum_dominates_feasible_schedules(params):
    r = _table(params)
    K, M, N = r.shape
    _, eta = solve(r)
    rng = np.random.default_rng(params[3] + 7)
    for _ in range(20):
        a = rng.random((K, M, N))
        a /= np.maximum(1, np.maximum(a.sum(axis=0, keepdims=True), a.sum(axis=1, keepdims=True)))
        a /= np.maximum(1, a.sum(axis=0, keepdims=True))
        a /= np.maximum(1, a.sum(axis=1, keepdims=True))
        assert np.einsum("kmn,kmn->k", a, r).min() / N <= eta + 1e-9


def test_lp_value_equals_true_min_rate_on_scenario():
    sc = random_scenario(3, num_users=4, num_uavs=2, period=20.0, num_slots=20,
                         discretization_threshold=2.0)
    traj, _ = init_circular_trajectories(sc)
    power = PowerProfile.full(sc)
    sched, eta = solve_scheduling(build_scheduling_lp(sc, traj, power))
    assert min_rate(sc, sched, traj, power) == pytest.approx(eta, rel=1e-12)
    assert validate_feasibility(sc, sched, traj, power) == []
