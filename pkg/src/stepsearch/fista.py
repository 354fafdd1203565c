"""Full-backtracking FISTA: deterministic baseline and stochastic step search.

Both methods carry a correction ratio ``theta`` so that step-size increases
and decreases are offset in the momentum recursion: after a success
``theta = gamma``, and each rejected step divides it by ``gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .ista import TrajectoryAborted, TrialSummary, _check_run_args, compute_alpha_bar, \
    trajectory_digest
from .oracle import IterationContext, OracleSpec, StochasticOracle, verify_true
from .problem import ProblemInstance, sufficient_decrease
from .trace import IterationRecord, tally_counters

__all__ = [
    "FistaState",
    "fista_step_update",
    "fista_sto_step",
    "run_fista",
    "fista_bktr_iterates",
    "fista_bktr_deterministic",
]


def fista_step_update(x, x_prev, t, theta):
    """Momentum update; returns ``(t_new, y)``.

    ``t_new = (1 + sqrt(1 + 4 theta t^2)) / 2`` and
    ``y = x + (t - 1)/t_new * (x - x_prev)``.
    """
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    t_new = (1.0 + math.sqrt(1.0 + 4.0 * theta * t * t)) / 2.0
    return t_new, x + ((t - 1.0) / t_new) * (x - x_prev)


@dataclass(frozen=True)
class FistaState:
    x: np.ndarray
    x_prev: np.ndarray
    t: float
    theta: float
    alpha: float
    alpha_succ: float
    k: int = 1
    gamma: float = 0.5
    alpha_bar: float = math.nan

    @classmethod
    def initial(cls, x0, alpha_1, gamma=0.5, alpha_bar=math.nan):
        """``t_0 = 0``, ``x_prev_0 = x_0``, ``theta_0 = gamma``, ``alpha_succ_0 = gamma*alpha_1``."""
        x0 = np.asarray(x0, dtype=float)
        return cls(x=x0, x_prev=x0, t=0.0, theta=gamma, alpha=alpha_1,
                   alpha_succ=gamma * alpha_1, k=1, gamma=gamma, alpha_bar=alpha_bar)


def _u_norm(x, x_prev, t, x_star):
    return float(np.linalg.norm((t - 1.0) * x_prev + x_star - t * x))


def _initial_record(inst, x0, t0, theta0, alpha_succ0):
    rec = IterationRecord(k=0, alpha_succ=alpha_succ0, t=t0, theta=theta0)
    if inst.reference_optimum is not None:
        rec.gap = inst.gap(x0)
        rec.u_norm = _u_norm(x0, x0, t0, inst.reference_optimum[0])
    return rec


def fista_sto_step(state: FistaState, inst: ProblemInstance, oracle: StochasticOracle):
    """One iteration of stochastic FISTA step search.

    The oracle context carries ``max(t_next, t_prev)``: whichever value
    ``t_k`` takes after the acceptance test, the decay cap stays valid.
    """
    t_next, y = fista_step_update(state.x, state.x_prev, state.t, state.theta)
    alpha = state.alpha
    est = oracle.sample(inst, y, IterationContext(state.k, alpha, max(t_next, state.t)))
    cand = inst.prox(y - alpha * est.g, alpha)
    if not math.isfinite(inst.value(cand)):
        raise TrajectoryAborted(f"nonfinite objective at iteration {state.k}")

    grad = inst.smooth_grad(y)
    is_true = verify_true(inst, y, alpha, est.g, oracle.spec.kappa_g, grad=grad)
    success = sufficient_decrease(inst, y, cand, est.g, alpha)
    if success:
        new = replace(state, x=cand, x_prev=state.x, t=t_next, theta=state.gamma,
                      alpha=alpha / state.gamma, alpha_succ=alpha, k=state.k + 1)
    else:
        new = replace(state, theta=state.theta / state.gamma, alpha=alpha * state.gamma,
                      k=state.k + 1)

    rec = IterationRecord(
        k=state.k, success=success, is_true=is_true,
        large=alpha > state.alpha_bar, large_plus=alpha >= state.alpha_bar,
        alpha=alpha, alpha_succ=new.alpha_succ, t=new.t, theta=new.theta,
        lam=2.0 * alpha * new.t * float(np.linalg.norm(grad - est.g)),
        injected=est.injected_error_norm)
    if inst.reference_optimum is not None:
        rec.gap = inst.gap(new.x)
        rec.u_norm = _u_norm(new.x, new.x_prev, new.t, inst.reference_optimum[0])
    return new, rec


def run_fista(inst: ProblemInstance, spec: OracleSpec, gamma=0.5, alpha_1=1.0, epsilon=1e-3,
              max_iters=100_000, seed=None, x0=None) -> TrialSummary:
    """Iterate :func:`fista_sto_step` until ``F(x_k) - F* <= epsilon`` or ``max_iters``."""
    _check_run_args(inst, gamma, alpha_1, epsilon)
    oracle = StochasticOracle(spec, seed=seed)
    alpha_bar = compute_alpha_bar(inst.lipschitz, spec.kappa_g)
    x0 = np.zeros(inst.dim) if x0 is None else np.asarray(x0, dtype=float)
    state = FistaState.initial(x0, alpha_1, gamma, alpha_bar)
    records = [_initial_record(inst, x0, state.t, state.theta, state.alpha_succ)]
    n_eps = 0 if records[0].gap <= epsilon else None
    while n_eps is None and state.k <= max_iters:
        state, rec = fista_sto_step(state, inst, oracle)
        records.append(rec)
        if rec.gap <= epsilon:
            n_eps = rec.k

    counters = tally_counters(records, n_eps, alpha_bar, gamma, alpha_1)
    lam = np.array([r.lam for r in records[1:]])
    return TrialSummary(
        algo="fista", seed=oracle.seed, epsilon=epsilon, n_eps=n_eps, censored=n_eps is None,
        iterations=len(records) - 1, counters=counters, records=records, x_final=state.x,
        digest=trajectory_digest(records), lambda_sq_sum=float(np.sum(lam * lam)))


def fista_bktr_iterates(inst: ProblemInstance, gamma=0.5, alpha_1=1.0, x0=None, grow=True):
    """Deterministic FISTA-BKTR with exact gradients, as a generator.

    Yields one ``(kind, payload)`` pair per attempted step, where ``kind`` is
    ``"reject"`` or ``"accept"`` and ``payload`` is a dict with ``y``,
    ``candidate``, ``x``, ``x_prev``, ``alpha``, ``t``, ``theta``. After a
    success the next trial step size is ``alpha / gamma`` (``alpha`` when
    ``grow`` is false).
    """
    x = np.zeros(inst.dim) if x0 is None else np.asarray(x0, dtype=float)
    x_prev = x
    t_prev = 0.0
    theta = 1.0
    alpha = alpha_1
    while True:
        # inner loop: shrink alpha until the decrease test passes
        while True:
            t_new, y = fista_step_update(x, x_prev, t_prev, theta)
            grad = inst.smooth_grad(y)
            cand = inst.prox(y - alpha * grad, alpha)
            if sufficient_decrease(inst, y, cand, grad, alpha):
                break
            theta = theta / gamma
            yield "reject", dict(y=y, candidate=cand, x=x, x_prev=x_prev, alpha=alpha,
                                 t=t_prev, theta=theta)
            alpha = gamma * alpha
        x_prev, x, t_prev = x, cand, t_new
        next_alpha = alpha / gamma if grow else alpha
        theta = alpha / next_alpha
        yield "accept", dict(y=y, candidate=cand, x=x, x_prev=x_prev, alpha=alpha,
                             t=t_prev, theta=theta)
        alpha = next_alpha


def fista_bktr_deterministic(inst: ProblemInstance, gamma=0.5, alpha_1=1.0, epsilon=1e-6,
                             max_outer=100_000, x0=None, grow=True) -> TrialSummary:
    """Run deterministic FISTA-BKTR until ``F(x_k) - F* <= epsilon``.

    Records are kept per attempted step (accepted or rejected) so the
    trajectory lines up with the stochastic method driven by an exact oracle;
    ``n_eps`` counts attempts and ``outer_iterations`` counts accepted steps.
    """
    _check_run_args(inst, gamma, alpha_1, epsilon)
    alpha_bar = compute_alpha_bar(inst.lipschitz, 0.0)
    x0 = np.zeros(inst.dim) if x0 is None else np.asarray(x0, dtype=float)
    x_star = inst.reference_optimum[0]
    alpha_succ = gamma * alpha_1
    records = [_initial_record(inst, x0, 0.0, 1.0, alpha_succ)]
    n_eps = 0 if records[0].gap <= epsilon else None
    outer = 0
    x_final = x0
    if n_eps is None:
        for k, (kind, s) in enumerate(fista_bktr_iterates(inst, gamma, alpha_1, x0, grow), start=1):
            success = kind == "accept"
            if success:
                outer += 1
                alpha_succ = s["alpha"]
                x_final = s["x"]
            prev = records[-1]
            rec = IterationRecord(
                k=k, success=success, is_true=True,
                large=s["alpha"] > alpha_bar, large_plus=s["alpha"] >= alpha_bar,
                alpha=s["alpha"], alpha_succ=alpha_succ, t=s["t"], theta=s["theta"], lam=0.0,
                injected=0.0)
            if success:
                rec.gap = inst.gap(s["x"])
                rec.u_norm = _u_norm(s["x"], s["x_prev"], s["t"], x_star)
            else:
                rec.gap, rec.u_norm = prev.gap, prev.u_norm
            records.append(rec)
            if rec.gap <= epsilon:
                n_eps = k
                break
            if outer >= max_outer:
                break

    counters = tally_counters(records, n_eps, alpha_bar, gamma, alpha_1)
    return TrialSummary(
        algo="fista_bktr", seed=0, epsilon=epsilon, n_eps=n_eps, censored=n_eps is None,
        iterations=len(records) - 1, counters=counters, records=records, x_final=x_final,
        digest=trajectory_digest(records), outer_iterations=outer)
