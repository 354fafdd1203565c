"""Stochastic ISTA step search.

Each iteration draws a fresh gradient estimate at the current iterate, takes a
proximal step with the current step size, and accepts it only if the exact
objective lies below the quadratic model built from the estimate. Accepted
steps enlarge the step size by ``1/gamma``; rejected steps shrink it by
``gamma``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .oracle import IterationContext, OracleSpec, StochasticOracle, verify_true
from .problem import ConfigurationError, ProblemInstance, sufficient_decrease
from .trace import CounterSet, IterationRecord, tally_counters

__all__ = [
    "TrajectoryAborted",
    "IstaState",
    "TrialSummary",
    "compute_alpha_bar",
    "ista_step",
    "run_ista",
]


class TrajectoryAborted(RuntimeError):
    """A candidate produced a nonfinite objective value."""


def compute_alpha_bar(lipschitz, kappa_g):
    """Step size below which every true iteration is successful."""
    if not 0 <= kappa_g < 1 / 3:
        raise ValueError(f"kappa_g must satisfy 0 <= kappa_g < 1/3, got {kappa_g}")
    if not lipschitz > 0:
        raise ValueError("lipschitz constant must be positive")
    return (1.0 - 2.0 * kappa_g / (1.0 - kappa_g)) / lipschitz


@dataclass(frozen=True)
class IstaState:
    x: np.ndarray
    alpha: float
    k: int = 1
    gamma: float = 0.5
    alpha_bar: float = math.nan


@dataclass
class TrialSummary:
    """Outcome of one seeded trajectory.

    ``n_eps`` is None when the run was censored by its iteration budget.
    ``records[0]`` is the initial state.
    """

    algo: str
    seed: int
    epsilon: float
    n_eps: int | None
    censored: bool
    iterations: int
    counters: CounterSet
    records: list = field(repr=False)
    x_final: np.ndarray = field(repr=False)
    digest: str = ""
    lambda_sq_sum: float = 0.0
    outer_iterations: int | None = None


def _check_run_args(inst, gamma, alpha_1, epsilon):
    if not 0 < gamma < 1:
        raise ConfigurationError(f"gamma must be in (0, 1), got {gamma}")
    if not alpha_1 > 0:
        raise ConfigurationError(f"alpha_1 must be positive, got {alpha_1}")
    if not epsilon > 0:
        raise ConfigurationError(f"epsilon must be positive, got {epsilon}")
    if inst.reference_optimum is None:
        raise ConfigurationError("instance has no reference optimum; run compute_reference first")


def trajectory_digest(records):
    cols = np.array([[r.k, float(bool(r.success)), float(bool(r.is_true)), r.alpha, r.gap, r.lam]
                     for r in records], dtype=float)
    return hashlib.sha256(cols.tobytes()).hexdigest()


def ista_step(state: IstaState, inst: ProblemInstance, oracle: StochasticOracle,
              kappa_g=None):
    """One iteration; returns the next state and the record of iteration ``state.k``."""
    y = state.x
    alpha = state.alpha
    est = oracle.sample(inst, y, IterationContext(state.k, alpha, 1.0))
    cand = inst.prox(y - alpha * est.g, alpha)
    if not math.isfinite(inst.value(cand)):
        raise TrajectoryAborted(f"nonfinite objective at iteration {state.k}")

    grad = inst.smooth_grad(y)
    kappa_g = oracle.spec.kappa_g if kappa_g is None else kappa_g
    is_true = verify_true(inst, y, alpha, est.g, kappa_g, grad=grad)
    success = sufficient_decrease(inst, y, cand, est.g, alpha)
    if success:
        x_new, alpha_next = cand, alpha / state.gamma
    else:
        x_new, alpha_next = y, alpha * state.gamma

    rec = IterationRecord(
        k=state.k, success=success, is_true=is_true,
        large=alpha > state.alpha_bar, large_plus=alpha >= state.alpha_bar,
        alpha=alpha, lam=2.0 * alpha * float(np.linalg.norm(grad - est.g)),
        injected=est.injected_error_norm)
    if inst.reference_optimum is not None:
        rec.gap = inst.gap(x_new)
        rec.u_norm = float(np.linalg.norm(x_new - inst.reference_optimum[0]))
    return replace(state, x=x_new, alpha=alpha_next, k=state.k + 1), rec


def run_ista(inst: ProblemInstance, spec: OracleSpec, gamma=0.5, alpha_1=1.0, epsilon=1e-3,
             max_iters=100_000, seed=None, x0=None) -> TrialSummary:
    """Iterate :func:`ista_step` until ``F(x_k) - F* <= epsilon`` or ``max_iters``."""
    _check_run_args(inst, gamma, alpha_1, epsilon)
    oracle = StochasticOracle(spec, seed=seed)
    alpha_bar = compute_alpha_bar(inst.lipschitz, spec.kappa_g)
    x0 = np.zeros(inst.dim) if x0 is None else np.asarray(x0, dtype=float)
    x_star = inst.reference_optimum[0]
    first = IterationRecord(k=0, gap=inst.gap(x0), u_norm=float(np.linalg.norm(x0 - x_star)))
    records = [first]
    state = IstaState(x=x0, alpha=alpha_1, k=1, gamma=gamma, alpha_bar=alpha_bar)
    n_eps = 0 if first.gap <= epsilon else None
    while n_eps is None and state.k <= max_iters:
        state, rec = ista_step(state, inst, oracle)
        records.append(rec)
        if rec.gap <= epsilon:
            n_eps = rec.k

    counters = tally_counters(records, n_eps, alpha_bar, gamma, alpha_1)
    lam = np.array([r.lam for r in records[1:]])
    return TrialSummary(
        algo="ista", seed=oracle.seed, epsilon=epsilon, n_eps=n_eps, censored=n_eps is None,
        iterations=len(records) - 1, counters=counters, records=records, x_final=state.x,
        digest=trajectory_digest(records), lambda_sq_sum=float(np.sum(lam * lam)))
