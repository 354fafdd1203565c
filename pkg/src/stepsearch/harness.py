"""Monte Carlo driver: reference solves, seeded trial fan-out, scaling estimates.

Trials are keyed by ``(epsilon index, trial index)``; their seeds are derived
from the master seed through :class:`numpy.random.SeedSequence`, so any single
trial can be replayed in isolation and results never depend on scheduling.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fista import fista_bktr_deterministic, fista_bktr_iterates, run_fista
from .ista import TrajectoryAborted, compute_alpha_bar, run_ista
from .oracle import OracleSpec, Schedule
from .problem import ConfigurationError, GeneratorConfig, ProblemInstance, gradient_mapping

__all__ = [
    "Algo",
    "ReferenceNotConverged",
    "TrialFailed",
    "ExperimentConfig",
    "TrialResult",
    "ScalingReport",
    "compute_reference",
    "attach_reference",
    "derive_seed",
    "noise_constant",
    "prefactor",
    "theorem_bound_ista",
    "theorem_bound_fista",
    "good_steps_bound_ista",
    "good_steps_bound_fista",
    "wald_bound",
    "loglog_slope",
    "run_trial",
    "run_monte_carlo",
    "write_summary_csv",
    "write_trials_csv",
    "write_scaling_json",
]


class Algo(str, enum.Enum):
    ISTA = "ista"
    FISTA = "fista"
    FISTA_BKTR = "fista_bktr"


class ReferenceNotConverged(RuntimeError):
    """The reference solve missed its gradient-mapping tolerance."""


class TrialFailed(RuntimeError):
    """A Monte Carlo trial aborted; the message carries the seed for replay."""


# ---------------------------------------------------------------------------
# reference optimum


def compute_reference(inst: ProblemInstance, alpha_1=None, gamma=0.5, rtol=1e-11,
                      max_iters=1_000_000):
    """High-accuracy ``(x_star, F_star)`` by deterministic FISTA-BKTR.

    Stops at the first accepted iterate with
    ``||D_{1/L}(x)|| <= rtol * max(1, ||grad f(0)||)``. Raises
    :class:`ReferenceNotConverged` if that does not happen within
    ``max_iters`` attempted steps.
    """
    step = 1.0 / inst.lipschitz
    alpha_1 = step if alpha_1 is None else alpha_1
    x0 = np.zeros(inst.dim)
    tol = rtol * max(1.0, float(np.linalg.norm(inst.smooth_grad(x0))))
    if np.linalg.norm(gradient_mapping(inst, x0, step)) <= tol:
        return x0, inst.value(x0)
    for n, (kind, s) in enumerate(fista_bktr_iterates(inst, gamma, alpha_1, x0), start=1):
        if kind == "accept":
            x = s["x"]
            if np.linalg.norm(gradient_mapping(inst, x, step)) <= tol:
                return x.copy(), inst.value(x)
        if n >= max_iters:
            break
    raise ReferenceNotConverged(
        f"gradient mapping above {tol:.3e} after {max_iters} iterations; "
        "experiments on this instance are refused")


def attach_reference(inst: ProblemInstance, **kwargs) -> ProblemInstance:
    """Return ``inst`` with its reference optimum filled in."""
    if inst.reference_optimum is not None:
        return inst
    x_star, f_star = compute_reference(inst, **kwargs)
    return inst.with_reference(x_star, f_star)


# ---------------------------------------------------------------------------
# closed-form bounds


def noise_constant(beta):
    """``4(beta+2)^2/beta^2 + 8(beta+2)/(beta+1)``."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return 4.0 * (beta + 2.0) ** 2 / beta**2 + 8.0 * (beta + 2.0) / (beta + 1.0)


def prefactor(p):
    """``2p / (2p - 1)^2``, the price of false iterations."""
    if not 0.5 < p <= 1:
        raise ValueError(f"p must satisfy 1/2 < p <= 1, got {p}")
    return 2.0 * p / (2.0 * p - 1.0) ** 2


def _log_term(gamma, alpha_bar, alpha_1):
    if not alpha_bar > 0:
        raise ValueError("alpha_bar must be positive")
    return math.log(alpha_bar / alpha_1) / math.log(gamma)


def _maybe_call(fn, epsilon):
    return fn if epsilon is None else fn(epsilon)


def theorem_bound_ista(p, gamma, alpha_bar, alpha_1, beta, dist0_sq, epsilon=None):
    """Upper bound on ``E[N_eps]`` for stochastic ISTA.

    Returns a function of ``epsilon`` unless ``epsilon`` is given.
    """
    c = prefactor(p)
    core = 2.0 * dist0_sq + noise_constant(beta)
    log_t = _log_term(gamma, alpha_bar, alpha_1)
    return _maybe_call(lambda eps: c * (core / (alpha_bar * eps) + log_t) + 1.0, epsilon)


def theorem_bound_fista(p, gamma, alpha_bar, alpha_1, beta, m0_terms, epsilon=None):
    """Upper bound on ``E[N_eps]`` for stochastic FISTA.

    ``m0_terms`` is ``3 alpha_succ_0 t_0^2 v_0 + 2 ||u_0||^2``, which is
    ``2 ||x_0 - x*||^2`` under the default ``t_0 = 0``.
    """
    c = prefactor(p)
    core = m0_terms + noise_constant(beta)
    log_t = _log_term(gamma, alpha_bar, alpha_1)
    return _maybe_call(
        lambda eps: c * (math.sqrt(8.0 * core / (alpha_bar * eps)) + log_t) + 1.0, epsilon)


def good_steps_bound_ista(alpha_bar, beta, dist0_sq, epsilon=None):
    """Upper bound on ``E[N_G]`` for stochastic ISTA."""
    core = 2.0 * dist0_sq + noise_constant(beta)
    return _maybe_call(lambda eps: core / (2.0 * alpha_bar * eps), epsilon)


def good_steps_bound_fista(alpha_bar, beta, m0_terms, epsilon=None):
    """Upper bound on ``E[N_G]`` for stochastic FISTA."""
    core = m0_terms + noise_constant(beta)
    return _maybe_call(lambda eps: math.sqrt(2.0 * core / (alpha_bar * eps)), epsilon)


def wald_bound(beta):
    """Pathwise cap ``4(beta+2)/(beta+1)`` on the summed squared noise under a schedule."""
    return 4.0 * (beta + 2.0) / (beta + 1.0)


# ---------------------------------------------------------------------------
# experiment description


def derive_seed(master_seed, eps_index, trial):
    """64-bit trial seed from ``(master_seed, eps_index, trial)``."""
    words = np.random.SeedSequence([int(master_seed), int(eps_index), int(trial)]) \
        .generate_state(2, dtype=np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


@dataclass(frozen=True)
class ExperimentConfig:
    problem: GeneratorConfig = field(default_factory=GeneratorConfig)
    oracle: OracleSpec = field(default_factory=OracleSpec)
    algo: Algo = Algo.ISTA
    gamma: float = 0.5
    alpha_1: float = 1.0
    epsilons: tuple = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
    trials: int = 50
    max_iters: int | None = None
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        algo = self.algo if isinstance(self.algo, Algo) else Algo(str(self.algo).replace("-", "_"))
        object.__setattr__(self, "algo", algo)
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        if not self.epsilons:
            raise ConfigurationError("run.epsilons must not be empty")
        if any(not e > 0 for e in self.epsilons):
            raise ConfigurationError("run.epsilons must be positive")
        if any(a <= b for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ConfigurationError("run.epsilons must be strictly decreasing")
        if int(self.trials) < 1:
            raise ConfigurationError(f"run.trials must be >= 1, got {self.trials}")
        if self.max_iters is not None and int(self.max_iters) < 1:
            raise ConfigurationError(f"run.max_iters must be >= 1, got {self.max_iters}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigurationError("run.master_seed must be a 64-bit unsigned integer")
        if int(self.workers) < 1:
            raise ConfigurationError(f"run.workers must be >= 1, got {self.workers}")
        if not 0 < self.gamma < 1:
            raise ConfigurationError(f"algo.gamma must be in (0, 1), got {self.gamma}")
        if not self.alpha_1 > 0:
            raise ConfigurationError(f"algo.alpha_1 must be positive, got {self.alpha_1}")
        self._check_schedule()

    @property
    def exact_oracle(self):
        return self.oracle.kappa_g == 0 and self.oracle.p == 1

    def _check_schedule(self):
        sched = self.oracle.schedule
        if self.algo is Algo.FISTA_BKTR:
            if not self.exact_oracle:
                raise ConfigurationError(
                    "algo fista_bktr is deterministic and needs oracle.kappa_g = 0, oracle.p = 1")
            return
        wanted = Schedule.ISTA_DECAY if self.algo is Algo.ISTA else Schedule.FISTA_DECAY
        if sched is wanted or (sched is Schedule.NONE and self.exact_oracle):
            return
        raise ConfigurationError(
            f"oracle.schedule must be {wanted.value!r} for algo {self.algo.value!r}, got "
            f"{sched.value!r} ('none' is accepted only with the exact oracle)")

    def bound_inputs(self, inst: ProblemInstance):
        """``(alpha_bar, dist0_sq)`` for the default start ``x_0 = 0``."""
        kappa = 0.0 if self.algo is Algo.FISTA_BKTR else self.oracle.kappa_g
        alpha_bar = compute_alpha_bar(inst.lipschitz, kappa)
        x_star = inst.reference_optimum[0]
        return alpha_bar, float(x_star @ x_star)

    def complexity_bound(self, inst: ProblemInstance):
        """``E[N_eps]`` bound as a function of ``epsilon``."""
        alpha_bar, d0 = self.bound_inputs(inst)
        p = 1.0 if self.algo is Algo.FISTA_BKTR else self.oracle.p
        if self.algo is Algo.ISTA:
            return theorem_bound_ista(p, self.gamma, alpha_bar, self.alpha_1,
                                      self.oracle.beta, d0)
        return theorem_bound_fista(p, self.gamma, alpha_bar, self.alpha_1,
                                   self.oracle.beta, 2.0 * d0)

    def good_steps_bound(self, inst: ProblemInstance):
        alpha_bar, d0 = self.bound_inputs(inst)
        if self.algo is Algo.ISTA:
            return good_steps_bound_ista(alpha_bar, self.oracle.beta, d0)
        return good_steps_bound_fista(alpha_bar, self.oracle.beta, 2.0 * d0)

    def resolved_max_iters(self, inst: ProblemInstance):
        if self.max_iters is not None:
            return int(self.max_iters)
        bound = self.complexity_bound(inst)(min(self.epsilons))
        return int(math.ceil(100.0 * bound))


# ---------------------------------------------------------------------------
# trials


@dataclass
class TrialResult:
    eps_index: int
    epsilon: float
    trial: int
    seed: int
    n_eps: int | None
    censored: bool
    iterations: int
    counters: dict
    lambda_sq_sum: float
    accounting_holds: bool | None
    digest: str


def run_trial(inst, cfg: ExperimentConfig, eps_index, trial, max_iters, keep_records=False):
    """Run one keyed trial; returns ``TrialResult`` (and the full summary if asked)."""
    eps = cfg.epsilons[eps_index]
    seed = derive_seed(cfg.master_seed, eps_index, trial)
    try:
        if cfg.algo is Algo.ISTA:
            summ = run_ista(inst, cfg.oracle, cfg.gamma, cfg.alpha_1, eps, max_iters, seed=seed)
        elif cfg.algo is Algo.FISTA:
            summ = run_fista(inst, cfg.oracle, cfg.gamma, cfg.alpha_1, eps, max_iters, seed=seed)
        else:
            summ = fista_bktr_deterministic(inst, cfg.gamma, cfg.alpha_1, eps, max_iters)
    except (TrajectoryAborted, FloatingPointError, ValueError) as exc:
        raise TrialFailed(
            f"trial {trial} at epsilon index {eps_index} (epsilon={eps!r}) failed with seed "
            f"{seed}: {exc}") from exc
    res = TrialResult(
        eps_index=eps_index, epsilon=eps, trial=trial, seed=seed, n_eps=summ.n_eps,
        censored=summ.censored, iterations=summ.iterations, counters=summ.counters.as_dict(),
        lambda_sq_sum=summ.lambda_sq_sum, accounting_holds=summ.counters.accounting_holds,
        digest=summ.digest)
    return (res, summ) if keep_records else res


def _trial_job(args):
    return run_trial(*args)


def loglog_slope(epsilons, means):
    """OLS slope of ``log(mean)`` on ``log(1/epsilon)`` and its standard error."""
    x = np.log(1.0 / np.asarray(epsilons, dtype=float))
    y = np.log(np.asarray(means, dtype=float))
    if x.size < 3:
        raise ValueError("slope needs at least 3 epsilon points")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xc
    stderr = math.sqrt(float(resid @ resid) / (x.size - 2) / sxx)
    return slope, stderr


@dataclass
class ScalingReport:
    """Per-epsilon aggregates, log-log slope and theorem constants."""

    algo: str
    epsilons: list
    trials: int
    max_iters: int
    means: list
    medians: list
    stddevs: list
    censored: list
    slope: float
    stderr: float
    slope_valid: bool
    theorem_bound: list
    good_steps_bound: list
    mean_good_steps: list
    stderr_good_steps: list
    good_steps_ok: list
    wald_bound: float | None
    wald_violations: int
    accounting_violations: int
    alpha_bar: float
    dist0_sq: float
    m0_terms: float
    results: list = field(repr=False, default_factory=list)

    @property
    def passed(self):
        return all(self.good_steps_ok) and self.wald_violations == 0 \
            and self.accounting_violations == 0 and not any(self.censored)

    def as_json(self):
        return {
            "algo": self.algo, "slope": self.slope, "stderr": self.stderr,
            "slope_valid": self.slope_valid, "epsilons": self.epsilons, "means": self.means,
            "medians": self.medians, "stddevs": self.stddevs, "censored": self.censored,
            "trials": self.trials, "max_iters": self.max_iters,
            "theorem_bound": self.theorem_bound, "good_steps_bound": self.good_steps_bound,
            "mean_good_steps": self.mean_good_steps,
            "stderr_good_steps": self.stderr_good_steps, "good_steps_ok": self.good_steps_ok,
            "wald_bound": self.wald_bound, "wald_violations": self.wald_violations,
            "accounting_violations": self.accounting_violations,
            "alpha_bar": self.alpha_bar, "dist0_sq": self.dist0_sq, "m0_terms": self.m0_terms,
            "passed": self.passed,
        }


def _stderr(values):
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(values.size))


def run_monte_carlo(cfg: ExperimentConfig, inst: ProblemInstance | None = None) -> ScalingReport:
    """Run ``cfg.trials`` seeded trials at every epsilon and aggregate them.

    ``inst`` defaults to the instance generated from ``cfg.problem``; a
    reference optimum is computed if it is missing. Censored trials enter
    the means as lower bounds and mark the slope invalid.
    """
    from .problem import make_instance

    inst = make_instance(cfg.problem) if inst is None else inst
    inst = attach_reference(inst)
    max_iters = cfg.resolved_max_iters(inst)
    keys = [(e, t) for e in range(len(cfg.epsilons)) for t in range(cfg.trials)]
    jobs = [(inst, cfg, e, t, max_iters) for e, t in keys]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunk = max(1, len(jobs) // (4 * cfg.workers))
            results = list(pool.map(_trial_job, jobs, chunksize=chunk))
    else:
        results = [_trial_job(j) for j in jobs]

    alpha_bar, d0 = cfg.bound_inputs(inst)
    bound = cfg.complexity_bound(inst)
    gbound = cfg.good_steps_bound(inst)
    scheduled = cfg.oracle.schedule is not Schedule.NONE and cfg.algo is not Algo.FISTA_BKTR
    wb = wald_bound(cfg.oracle.beta) if scheduled else None

    means, medians, stds, cens, gmeans, gses, gok, tb, gb = ([] for _ in range(9))
    wald_viol = acc_viol = 0
    for e, eps in enumerate(cfg.epsilons):
        rows = [r for r in results if r.eps_index == e]
        n = np.array([r.iterations if r.censored else r.n_eps for r in rows], dtype=float)
        g = np.array([r.counters["N_G"] for r in rows], dtype=float)
        means.append(float(n.mean()))
        medians.append(float(np.median(n)))
        stds.append(float(n.std(ddof=1)) if n.size > 1 else 0.0)
        cens.append(sum(r.censored for r in rows))
        gmeans.append(float(g.mean()))
        gses.append(_stderr(g))
        tb.append(float(bound(eps)))
        gb.append(float(gbound(eps)))
        gok.append(bool(gmeans[-1] <= gb[-1] + 2.0 * gses[-1]))
        if wb is not None:
            wald_viol += sum(r.lambda_sq_sum > wb for r in rows)
        acc_viol += sum(r.accounting_holds is False for r in rows)

    if len(cfg.epsilons) >= 3 and min(means) > 0:
        slope, stderr = loglog_slope(cfg.epsilons, means)
    else:
        slope, stderr = math.nan, math.nan
    return ScalingReport(
        algo=cfg.algo.value, epsilons=list(cfg.epsilons), trials=cfg.trials,
        max_iters=max_iters, means=means, medians=medians, stddevs=stds, censored=cens,
        slope=slope, stderr=stderr, slope_valid=not any(cens) and math.isfinite(slope),
        theorem_bound=tb, good_steps_bound=gb, mean_good_steps=gmeans,
        stderr_good_steps=gses, good_steps_ok=gok, wald_bound=wb, wald_violations=wald_viol,
        accounting_violations=acc_viol, alpha_bar=alpha_bar, dist0_sq=d0, m0_terms=2.0 * d0,
        results=results)


# ---------------------------------------------------------------------------
# writers

_COUNTER_NAMES = ("N_G", "N_F", "N_FS", "N_T", "N_U")


def _g(v):
    return format(v, ".17g")


def write_summary_csv(report: ScalingReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps_index", "epsilon", "trials", "mean_n_eps", "median_n_eps",
                    "std_n_eps", "censored", "theorem_bound", "mean_N_G", "stderr_N_G",
                    "good_steps_bound", "good_steps_ok"])
        for e, eps in enumerate(report.epsilons):
            w.writerow([e, _g(eps), report.trials, _g(report.means[e]), _g(report.medians[e]),
                        _g(report.stddevs[e]), report.censored[e], _g(report.theorem_bound[e]),
                        _g(report.mean_good_steps[e]), _g(report.stderr_good_steps[e]),
                        _g(report.good_steps_bound[e]), int(report.good_steps_ok[e])])


def write_trials_csv(report: ScalingReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps_index", "epsilon", "trial", "seed", "n_eps", "censored", "iterations",
                    *_COUNTER_NAMES, "lambda_sq_sum", "accounting_holds", "digest"])
        for r in report.results:
            w.writerow([r.eps_index, _g(r.epsilon), r.trial, r.seed,
                        "" if r.n_eps is None else r.n_eps, int(r.censored), r.iterations,
                        *(r.counters[c] for c in _COUNTER_NAMES), _g(r.lambda_sq_sum),
                        "" if r.accounting_holds is None else int(r.accounting_holds),
                        r.digest])


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_scaling_json(report: ScalingReport, path):
    with open(path, "w") as fh:
        json.dump(_json_safe(report.as_json()), fh, indent=2, sort_keys=True)
        fh.write("\n")
