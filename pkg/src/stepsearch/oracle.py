"""Stochastic first-order oracles with controlled accuracy probability.

An oracle returns ``g = grad f(y) + e`` where, with probability exactly ``p``,
``||e|| <= kappa_g * ||D_alpha(y)||`` (a *true* estimate) and otherwise ``e``
has norm ``corruption_magnitude * ||D_alpha(y)||``. Optional decay schedules
cap ``||e||`` on every draw, so variance-decay conditions hold pathwise.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .problem import ConfigurationError, ProblemInstance

__all__ = [
    "Schedule",
    "OracleSpec",
    "IterationContext",
    "GradientEstimate",
    "StochasticOracle",
    "schedule_cap",
    "sfo_sample",
    "verify_true",
]


class Schedule(str, enum.Enum):
    NONE = "none"
    ISTA_DECAY = "ista_decay"
    FISTA_DECAY = "fista_decay"


@dataclass(frozen=True)
class OracleSpec:
    kappa_g: float = 0.2
    p: float = 0.8
    schedule: Schedule = Schedule.NONE
    beta: float = 1.0
    corruption_magnitude: float = 3.0
    seed: int = 0
    biased: bool = False

    def __post_init__(self):
        object.__setattr__(self, "schedule", Schedule(self.schedule))
        if not 0 <= self.kappa_g < 1 / 3:
            raise ConfigurationError(
                f"oracle.kappa_g must satisfy 0 <= kappa_g < 1/3, got {self.kappa_g}")
        if not 0.5 < self.p <= 1:
            raise ConfigurationError(f"oracle.p must satisfy 1/2 < p <= 1, got {self.p}")
        if not self.beta > 0:
            raise ConfigurationError(f"oracle.beta must be positive, got {self.beta}")
        if not self.corruption_magnitude > self.kappa_g:
            raise ConfigurationError(
                "oracle.corruption_magnitude must exceed kappa_g, "
                f"got {self.corruption_magnitude} <= {self.kappa_g}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("oracle.seed must be a 64-bit unsigned integer")

    @classmethod
    def exact(cls, **kwargs):
        """Oracle that always returns the exact gradient."""
        return cls(kappa_g=0.0, p=1.0, schedule=Schedule.NONE, **kwargs)


@dataclass(frozen=True)
class IterationContext:
    k: int
    alpha_k: float
    t_k: float = 1.0

    def __post_init__(self):
        if self.k < 1 or not self.alpha_k > 0 or not self.t_k >= 0:
            raise ValueError(f"invalid iteration context {self}")


@dataclass(frozen=True)
class GradientEstimate:
    g: np.ndarray
    is_true: bool
    injected_error_norm: float


def schedule_cap(schedule, beta, ctx: IterationContext):
    """Pathwise bound on ``||g - grad f(y)||`` imposed by a decay schedule."""
    schedule = Schedule(schedule)
    if schedule is Schedule.NONE:
        return math.inf
    denom = ctx.alpha_k * ctx.k ** (1.0 + beta / 2.0)
    if schedule is Schedule.FISTA_DECAY:
        if ctx.t_k == 0:
            return math.inf
        denom *= ctx.t_k
    return 1.0 / denom


def verify_true(inst: ProblemInstance, y, alpha, est, kappa_g, grad=None, dnorm=None):
    """Recompute ``||g - grad f(y)|| <= kappa_g * ||D_alpha(y)||`` from scratch.

    ``est`` may be a :class:`GradientEstimate` or a bare vector.
    """
    g = est.g if isinstance(est, GradientEstimate) else np.asarray(est)
    if grad is None:
        grad = inst.smooth_grad(y)
    if dnorm is None:
        dnorm = float(np.linalg.norm(y - inst.prox(y - alpha * grad, alpha))) / alpha
    return bool(np.linalg.norm(g - grad) <= kappa_g * dnorm)


class StochasticOracle:
    """Seeded ``SFO(kappa_g, p)`` sampler owning a private random stream.

    Every call consumes the same number of variates (coin, radius, direction),
    so two oracles built from the same seed yield identical streams for the
    same call sequence.
    """

    def __init__(self, spec: OracleSpec, seed=None):
        self.spec = spec
        self.seed = int(spec.seed if seed is None else seed)
        self._rng = np.random.default_rng(self.seed)
        self._drift = None

    def _direction(self, n):
        if self.spec.biased:
            if self._drift is None:
                z = np.random.default_rng([self.seed, 1]).standard_normal(n)
                self._drift = z / np.linalg.norm(z)
            self._rng.standard_normal(n)
            return self._drift
        z = self._rng.standard_normal(n)
        nz = np.linalg.norm(z)
        return z / nz if nz > 0 else z

    def sample(self, inst: ProblemInstance, y, ctx: IterationContext) -> GradientEstimate:
        spec = self.spec
        coin = self._rng.random()
        radius = self._rng.random()
        u = self._direction(y.shape[0])

        grad = inst.smooth_grad(y)
        alpha = ctx.alpha_k
        dnorm = float(np.linalg.norm(y - inst.prox(y - alpha * grad, alpha))) / alpha
        if coin < spec.p:
            mag = radius * spec.kappa_g * dnorm
        else:
            mag = spec.corruption_magnitude * dnorm
        cap = schedule_cap(spec.schedule, spec.beta, ctx)
        mag = min(mag, cap)

        g = grad + mag * u if mag > 0 else grad.copy()
        err = float(np.linalg.norm(g - grad))
        # rounding in grad + mag*u can push the realized error past the cap
        while err > cap:
            mag *= (cap / err) * (1.0 - 2.0**-40)
            g = grad + mag * u
            err = float(np.linalg.norm(g - grad))
        is_true = verify_true(inst, y, alpha, g, spec.kappa_g, grad=grad, dnorm=dnorm)
        return GradientEstimate(g=g, is_true=is_true, injected_error_norm=err)

    __call__ = sample


def sfo_sample(oracle: StochasticOracle, inst, y, ctx) -> GradientEstimate:
    return oracle.sample(inst, y, ctx)
