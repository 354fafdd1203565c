import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stepsearch.oracle import (GradientEstimate, IterationContext, OracleSpec, Schedule,
                               StochasticOracle, schedule_cap, sfo_sample, verify_true)
from stepsearch.problem import ConfigurationError, gradient_mapping


def _draws(inst, spec, n, seed=0, alpha=0.7):
    oracle = StochasticOracle(spec, seed=seed)
    rng = np.random.default_rng(seed + 1)
    out = []
    for k in range(1, n + 1):
        y = rng.standard_normal(inst.dim)
        out.append((y, oracle.sample(inst, y, IterationContext(k, alpha, 1.0 + k / 3))))
    return out


@pytest.mark.parametrize("kappa,p", [(0.1, 0.6), (0.25, 0.9), (0.2, 0.8)])
def test_true_frequency_matches_p(small_lasso, kappa, p):
    n = 4000
    hits = sum(e.is_true for _, e in _draws(small_lasso, OracleSpec(kappa, p), n))
    sd = math.sqrt(n * p * (1 - p))
    assert abs(hits - n * p) <= 3 * sd


def test_exact_oracle_returns_gradient(small_lasso):
    for y, est in _draws(small_lasso, OracleSpec.exact(), 20):
        np.testing.assert_array_equal(est.g, small_lasso.smooth_grad(y))
        assert est.is_true and est.injected_error_norm == 0.0


def test_true_flag_recomputed_independently(small_lasso):
    spec = OracleSpec(0.2, 0.7)
    for y, est in _draws(small_lasso, spec, 200):
        dnorm = np.linalg.norm(gradient_mapping(small_lasso, y, 0.7))
        err = np.linalg.norm(est.g - small_lasso.smooth_grad(y))
        assert est.is_true == bool(err <= 0.2 * dnorm)
        assert est.is_true == verify_true(small_lasso, y, 0.7, est.g, 0.2)
        assert est.is_true == verify_true(small_lasso, y, 0.7, est, 0.2)


@pytest.mark.parametrize("schedule", ["ista_decay", "fista_decay"])
def test_schedule_caps_hold_exactly(small_lasso, schedule):
    spec = OracleSpec(0.2, 0.6, schedule=schedule, beta=1.0)
    oracle = StochasticOracle(spec, seed=4)
    rng = np.random.default_rng(0)
    for k in range(1, 400):
        ctx = IterationContext(k, float(rng.uniform(0.1, 4.0)), float(rng.uniform(1, 50)))
        y = 10 * rng.standard_normal(small_lasso.dim)
        est = oracle.sample(small_lasso, y, ctx)
        err = np.linalg.norm(est.g - small_lasso.smooth_grad(y))
        cap = schedule_cap(schedule, 1.0, ctx)
        assert est.injected_error_norm == err
        assert err <= cap


def test_schedule_cap_values():
    ctx = IterationContext(4, 0.5, 2.0)
    assert schedule_cap("none", 1.0, ctx) == math.inf
    # 1 / (0.5 * 4**1.5) = 1/4
    assert schedule_cap("ista_decay", 1.0, ctx) == 0.25
    assert schedule_cap("fista_decay", 1.0, ctx) == 0.125
    assert schedule_cap(Schedule.FISTA_DECAY, 1.0, IterationContext(4, 0.5, 0.0)) == math.inf


def test_same_seed_same_stream(small_lasso):
    spec = OracleSpec(0.2, 0.8)
    a = [e.g for _, e in _draws(small_lasso, spec, 30, seed=11)]
    b = [e.g for _, e in _draws(small_lasso, spec, 30, seed=11)]
    c = [e.g for _, e in _draws(small_lasso, spec, 30, seed=12)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_biased_oracle_uses_fixed_direction(small_lasso):
    spec = OracleSpec(0.2, 0.8, biased=True)
    dirs = []
    for y, est in _draws(small_lasso, spec, 30, seed=2):
        e = est.g - small_lasso.smooth_grad(y)
        if est.injected_error_norm > 0:
            dirs.append(e / np.linalg.norm(e))
    assert len(dirs) > 10
    for d in dirs:
        np.testing.assert_allclose(d, dirs[0], atol=1e-9)


@pytest.mark.parametrize("kwargs", [dict(p=0.5), dict(p=0.4), dict(p=1.1), dict(kappa_g=1 / 3),
                                    dict(kappa_g=-0.1), dict(beta=0.0), dict(schedule="weekly"),
                                    dict(corruption_magnitude=0.1)])
def test_invalid_specs(kwargs):
    with pytest.raises((ConfigurationError, ValueError)):
        OracleSpec(**kwargs)


def test_p_message_names_requirement():
    with pytest.raises(ConfigurationError, match="1/2 < p"):
        OracleSpec(p=0.4)


def test_invalid_context():
    with pytest.raises(ValueError):
        IterationContext(0, 1.0)
    with pytest.raises(ValueError):
        IterationContext(1, 0.0)


@settings(max_examples=25)
@given(st.integers(0, 2**63), st.floats(0.0, 0.33), st.floats(0.51, 1.0))
def test_sample_is_well_formed(seed, kappa, p):
    from stepsearch.problem import GeneratorConfig, make_lasso

    inst = make_lasso(GeneratorConfig(dim=4, data_rows=6, seed=1))
    est = sfo_sample(StochasticOracle(OracleSpec(kappa, p), seed=seed), inst, np.ones(4),
                     IterationContext(1, 1.0))
    assert isinstance(est, GradientEstimate)
    assert np.all(np.isfinite(est.g)) and est.injected_error_norm >= 0
