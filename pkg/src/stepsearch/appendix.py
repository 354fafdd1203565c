"""Toy nonnegative processes contrasting E[N_eps] with E[Y_n].

Each process is i.i.d. or index-dependent with a known per-step probability
``h_n`` of the hitting event ``Y_n <= eps``. Hitting times are drawn by
inversion of the survival function ``S(n) = prod_{j<=n} (1 - h_j)`` from one
stratified uniform per trial, which keeps the heavy-tailed case estimable at
desk scale. :func:`sample_path` draws literal ``Y_n`` paths for cross-checks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

__all__ = [
    "AppendixKind",
    "AppendixResult",
    "hazard",
    "survival",
    "analytic_expected_y",
    "analytic_expected_hitting_time",
    "harmonic_number",
    "sample_path",
    "hitting_times",
    "simulate_appendix_process",
]


class AppendixKind(str, enum.Enum):
    EX1A = "ex1a"
    EX1B = "ex1b"
    EX2A = "ex2a"
    EX2B = "ex2b"


def _check(kind, epsilon):
    kind = AppendixKind(kind)
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if kind is AppendixKind.EX2B and not epsilon < 0.5:
        raise ValueError(f"ex2b needs epsilon < 1/2 for valid probabilities, got {epsilon}")
    return kind


def hazard(kind, epsilon, n):
    """``P(Y_n <= eps)`` for step ``n >= 1``."""
    kind = _check(kind, epsilon)
    if kind is AppendixKind.EX1A:
        return 0.5
    if kind is AppendixKind.EX2B:
        return 1.0 / (n + 1)
    return epsilon


def survival(kind, epsilon, n):
    """``P(N_eps > n)`` as a float array over ``n``."""
    kind = _check(kind, epsilon)
    n = np.asarray(n, dtype=float)
    if kind is AppendixKind.EX2B:
        return 1.0 / (n + 1.0)
    return np.exp(n * math.log1p(-hazard(kind, epsilon, 1)))


def analytic_expected_y(kind, epsilon, n=1) -> Fraction:
    """Exact ``E[Y_n]`` in rational arithmetic on the binary value of ``epsilon``."""
    kind = _check(kind, epsilon)
    e = Fraction(epsilon)
    if kind is AppendixKind.EX1A:
        return (1 + e) / 2
    if kind is AppendixKind.EX1B:
        return (1 - e) + e * e
    if kind is AppendixKind.EX2A:
        return e / (1 - e) * (1 - e)
    return e / 2 + e / (1 - e) * (Fraction(n, n + 1) - e)


def analytic_expected_hitting_time(kind, epsilon):
    kind = _check(kind, epsilon)
    if kind is AppendixKind.EX2B:
        return math.inf
    return 1.0 / hazard(kind, epsilon, 1)


def harmonic_number(n):
    return float(np.sum(1.0 / np.arange(1, int(n) + 1, dtype=float)))


def sample_path(kind, epsilon, length, rng):
    """Literal draw of ``Y_1 .. Y_length``."""
    kind = _check(kind, epsilon)
    u = rng.random(length)
    n = np.arange(1, length + 1, dtype=float)
    if kind is AppendixKind.EX1A:
        return np.where(u < 0.5, epsilon, 1.0)
    if kind is AppendixKind.EX1B:
        return np.where(u < epsilon, epsilon, 1.0)
    if kind is AppendixKind.EX2A:
        return np.where(u < epsilon, 0.0, epsilon / (1 - epsilon))
    zero = u < 1.0 / (n + 1.0)
    half = (~zero) & (u < 1.0 / (n + 1.0) + epsilon)
    return np.where(zero, 0.0, np.where(half, 0.5, epsilon / (1 - epsilon)))


def hitting_times(kind, epsilon, u):
    """Invert the survival function: smallest ``n >= 1`` with ``S(n) <= u``."""
    kind = _check(kind, epsilon)
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore"):
        if kind is AppendixKind.EX2B:
            raw = np.ceil(1.0 / u - 1.0)
        else:
            raw = np.ceil(np.log(u) / math.log1p(-hazard(kind, epsilon, 1)))
    raw = np.where(np.isfinite(raw), raw, np.iinfo(np.int64).max // 2)
    return np.maximum(raw, 1.0).astype(np.int64)


@dataclass
class AppendixResult:
    kind: str
    epsilon: float
    trials: int
    seed: int
    horizon: int
    mean_hitting_time: float
    stderr: float
    truncated_means: dict = field(default_factory=dict)
    harmonic_sums: dict = field(default_factory=dict)
    analytic_hitting_time: float = math.nan
    expected_y: list = field(default_factory=list)

    def as_json(self):
        return {
            "kind": self.kind, "epsilon": self.epsilon, "trials": self.trials,
            "seed": self.seed, "horizon": self.horizon,
            "mean_hitting_time": self.mean_hitting_time, "stderr": self.stderr,
            "analytic_hitting_time": (None if math.isinf(self.analytic_hitting_time)
                                      else self.analytic_hitting_time),
            "truncated_means": {str(h): v for h, v in self.truncated_means.items()},
            "harmonic_sums": {str(h): v for h, v in self.harmonic_sums.items()},
            "expected_y": [{"n": n, "exact": str(v), "value": float(v)}
                           for n, v in self.expected_y],
        }


def simulate_appendix_process(kind, epsilon, trials=100_000, seed=0, horizon=10**6,
                              horizons=(10**3, 10**4, 10**5), y_steps=5) -> AppendixResult:
    """Estimate ``E[min(N_eps, horizon)]`` from ``trials`` stratified draws.

    Trial ``i`` uses ``U_i = (i + V_i) / trials`` with ``V_i`` uniform, so
    the uniforms cover ``(0, 1)`` evenly; the estimator stays unbiased and the
    reported standard error (plain i.i.d. formula) is conservative.
    ``truncated_means[H]`` is ``E[min(N_eps, H)]`` for each ``H`` in
    ``horizons``; ``expected_y`` holds the exact ``E[Y_n]`` for ``n = 1..y_steps``.
    """
    kind = _check(kind, epsilon)
    if int(trials) < 1000:
        raise ValueError(f"trials must be >= 1000, got {trials}")
    rng = np.random.default_rng(int(seed))
    u = (np.arange(trials) + rng.random(trials)) / trials
    n = hitting_times(kind, epsilon, u)
    capped = np.minimum(n, horizon).astype(float)
    tmeans = {int(h): float(np.minimum(n, h).mean()) for h in horizons}
    hsums = {int(h): harmonic_number(h) for h in horizons} if kind is AppendixKind.EX2B else {}
    return AppendixResult(
        kind=kind.value, epsilon=float(epsilon), trials=int(trials), seed=int(seed),
        horizon=int(horizon), mean_hitting_time=float(capped.mean()),
        stderr=float(capped.std(ddof=1) / math.sqrt(trials)),
        truncated_means=tmeans, harmonic_sums=hsums,
        analytic_hitting_time=analytic_expected_hitting_time(kind, epsilon),
        expected_y=[(k, analytic_expected_y(kind, epsilon, k)) for k in range(1, y_steps + 1)])
