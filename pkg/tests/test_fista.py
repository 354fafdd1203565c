import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stepsearch.fista import (FistaState, fista_bktr_deterministic, fista_bktr_iterates,
                              fista_step_update, fista_sto_step, run_fista)
from stepsearch.ista import compute_alpha_bar, run_ista
from stepsearch.oracle import OracleSpec, StochasticOracle
from stepsearch.problem import GeneratorConfig, make_instance
from stepsearch.harness import attach_reference
from stepsearch.trace import check_invariants


def test_first_step_from_zero_t():
    x, xp = np.array([1.0, 2.0]), np.array([1.0, 2.0])
    t_new, y = fista_step_update(x, xp, 0.0, 0.5)
    assert t_new == 1.0
    np.testing.assert_array_equal(y, x)


def test_golden_ratio_step():
    x, xp = np.array([3.0]), np.array([-1.0])
    t_new, y = fista_step_update(x, xp, 1.0, 1.0)
    assert t_new == pytest.approx(1.6180339887, abs=1e-10)
    np.testing.assert_array_equal(y, x)


def test_theta_must_be_positive():
    with pytest.raises(ValueError):
        fista_step_update(np.zeros(1), np.zeros(1), 1.0, 0.0)


@given(st.floats(0, 1e6), st.floats(1e-6, 1e6))
def test_root_identity(t, theta):
    t_new, _ = fista_step_update(np.zeros(1), np.zeros(1), t, theta)
    assert t_new >= 1
    assert t_new * (t_new - 1) == pytest.approx(theta * t * t, rel=1e-12, abs=1e-12)


def test_exact_oracle_matches_full_backtracking(lasso):
    sto = run_fista(lasso, OracleSpec.exact(), epsilon=1e-7, max_iters=5000)
    det = fista_bktr_deterministic(lasso, epsilon=1e-7, max_outer=5000)
    assert sto.n_eps == det.n_eps
    for a, b in zip(sto.records[1:], det.records[1:]):
        assert a.success == b.success and a.alpha == b.alpha
        assert a.t == pytest.approx(b.t, rel=1e-12)
    # iterate sequences of accepted steps
    state = FistaState.initial(np.zeros(lasso.dim), 1.0, 0.5, 1 / lasso.lipschitz)
    oracle = StochasticOracle(OracleSpec.exact())
    gen = fista_bktr_iterates(lasso, 0.5, 1.0)
    for _ in range(300):
        state, rec = fista_sto_step(state, lasso, oracle)
        kind, s = next(gen)
        assert rec.success == (kind == "accept")
        scale = max(1.0, np.abs(s["x"]).max())
        assert np.abs(state.x - s["x"]).max() <= 1e-12 * scale


def test_deterministic_tail_slope(lasso):
    res = fista_bktr_deterministic(lasso, epsilon=1e-10, max_outer=20_000)
    acc = [r for r in res.records[1:] if r.success]
    k = np.arange(1, len(acc) + 1, dtype=float)
    gaps = np.array([r.gap for r in acc])
    tail = (k >= 10) & (k <= 100)
    slope = np.polyfit(np.log(k[tail]), np.log(gaps[tail]), 1)[0]
    assert slope <= -1.8


def test_quadratic_no_backtracking_t_grows_linearly():
    inst = attach_reference(make_instance(GeneratorConfig(kind="smooth_only", dim=8, seed=4,
                                                          conditioning=100.0)))
    res = fista_bktr_deterministic(inst, gamma=0.5, alpha_1=0.5 / inst.lipschitz,
                                   epsilon=1e-30, max_outer=60, grow=False)
    assert all(r.success for r in res.records[1:])
    for j, r in enumerate(res.records[1:], start=1):
        assert r.t >= (j + 1) / 2 - 1e-12


def test_eps_above_initial_gap_returns_immediately(lasso):
    res = fista_bktr_deterministic(lasso, epsilon=1e6)
    assert res.n_eps == 0 and res.iterations == 0


def test_same_seed_same_summary(lasso):
    spec = OracleSpec(0.2, 0.8, schedule="fista_decay")
    a = run_fista(lasso, spec, epsilon=1e-2, seed=9)
    b = run_fista(lasso, spec, epsilon=1e-2, seed=9)
    assert a.digest == b.digest and a.counters == b.counters


def test_alpha_succ_t_squared_nondecreasing(lasso):
    res = run_fista(lasso, OracleSpec(0.25, 0.6, schedule="fista_decay"), epsilon=1e-3, seed=2)
    w = np.array([r.alpha_succ * r.t**2 for r in res.records])
    assert np.all(np.diff(w) >= -1e-12 * np.abs(w[1:]))


def test_t_can_decrease_after_success(lasso):
    # theta = gamma < 1 lets t shrink on a success that follows another success
    seen = False
    for seed in range(20):
        res = run_fista(lasso, OracleSpec(0.25, 0.6, schedule="fista_decay"),
                        epsilon=1e-3, seed=seed)
        ts = [r.t for r in res.records[1:] if r.success]
        if any(b < a for a, b in zip(ts, ts[1:])):
            seen = True
            break
    assert seen


def test_unsuccessful_step_keeps_state(small_lasso):
    state = FistaState.initial(np.ones(small_lasso.dim), 1e4, 0.5, 1.0)
    new, rec = fista_sto_step(state, small_lasso, StochasticOracle(OracleSpec.exact()))
    assert not rec.success
    assert np.array_equal(new.x, state.x) and new.t == state.t
    assert new.theta == 1.0 and new.alpha == 5e3


def test_momentum_growth_end_of_run(lasso):
    res = run_fista(lasso, OracleSpec(0.1, 0.9, schedule="fista_decay"), epsilon=1e-3, seed=4)
    last = res.records[-1]
    s = sum(math.sqrt(r.alpha) for r in res.records[1:] if r.success)
    assert last.alpha_succ * last.t**2 >= (s / 2) ** 2 * (1 - 1e-12)


def test_acceleration_against_ista(lasso):
    f = fista_bktr_deterministic(lasso, epsilon=1e-6, max_outer=50_000)
    i = run_ista(lasso, OracleSpec.exact(), epsilon=1e-6, max_iters=200_000)
    assert f.outer_iterations < sum(r.success for r in i.records[1:])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**63), st.sampled_from([0.0, 0.1, 0.25]), st.sampled_from([0.6, 0.9, 1.0]))
def test_invariants_hold_for_random_seeds(small_lasso, seed, kappa, p):
    res = run_fista(small_lasso, OracleSpec(kappa, p, schedule="fista_decay"), epsilon=1e-5,
                    max_iters=3000, seed=seed)
    report = check_invariants(res.records, "fista",
                              compute_alpha_bar(small_lasso.lipschitz, kappa), 0.5)
    assert report.passed, list(report.lines())
    assert res.lambda_sq_sum <= 4 * 3 / 2
