"""Composite objectives ``F(x) = f(x) + h(x)`` and seeded test instances.

Every instance is stored in least-squares form

    f(x) = 0.5 * ||A x - b||^2,    h(x) = l1_weight * ||x||_1,

which covers the lasso, shifted quadratics ``0.5 (x - c)^T H (x - c)`` (take
``A = H^{1/2}``, ``b = A c``) and the smooth-only case ``l1_weight = 0``.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ConfigurationError",
    "ProblemKind",
    "GeneratorConfig",
    "ProblemInstance",
    "prox_l1",
    "power_iteration",
    "make_instance",
    "make_lasso",
    "make_quadratic",
    "instance_from_data",
    "gradient_mapping",
    "model_value",
    "sufficient_decrease",
    "write_instance",
    "read_instance",
]


class ConfigurationError(ValueError):
    """Raised for invalid problem, oracle, solver or experiment settings."""


class ProblemKind(str, enum.Enum):
    LASSO = "lasso"
    QUADRATIC = "quadratic"
    SMOOTH_ONLY = "smooth_only"


@dataclass(frozen=True)
class GeneratorConfig:
    """Seeded recipe for a test instance.

    ``conditioning`` is the ratio between the largest and smallest nonzero
    eigenvalue of ``A^T A``; the eigenvalues are spread log-uniformly between
    the two so that every scale of curvature is represented.
    """

    kind: ProblemKind = ProblemKind.LASSO
    dim: int = 50
    data_rows: int = 100
    l1_weight: float = 0.01
    seed: int = 0
    conditioning: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "kind", ProblemKind(self.kind))
        if int(self.dim) < 1:
            raise ConfigurationError(f"problem.dim must be >= 1, got {self.dim}")
        if int(self.data_rows) < 1:
            raise ConfigurationError(f"problem.data_rows must be >= 1, got {self.data_rows}")
        if not self.l1_weight >= 0:
            raise ConfigurationError(f"problem.l1_weight must be >= 0, got {self.l1_weight}")
        if not self.conditioning >= 1:
            raise ConfigurationError(
                f"problem.conditioning must be >= 1, got {self.conditioning}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("problem.seed must be a 64-bit unsigned integer")


def prox_l1(y, scale, weight):
    """Soft-thresholding, the prox of ``weight * ||.||_1`` with step ``scale``.

    Returns ``argmin_x weight*||x||_1 + ||x - y||^2 / (2*scale)``.
    """
    if not scale > 0:
        raise ValueError(f"prox scale must be positive, got {scale}")
    y = np.asarray(y, dtype=float)
    thresh = scale * weight
    if thresh == 0:
        return y.copy()
    return np.sign(y) * np.maximum(np.abs(y) - thresh, 0.0)


def power_iteration(A, rtol=1e-10, max_iter=10_000, seed=0):
    """Largest eigenvalue of ``A^T A`` by power iteration on the Rayleigh quotient."""
    A = np.asarray(A, dtype=float)
    n = A.shape[1]
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            return lam_new
        lam = lam_new
    return lam


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Composite objective ``0.5*||A x - b||^2 + l1_weight*||x||_1``.

    Instances are immutable and picklable. ``reference_optimum`` is
    ``(x_star, F_star)`` once a reference solve has been attached with
    :meth:`with_reference`.
    """

    A: np.ndarray
    b: np.ndarray
    l1_weight: float
    lipschitz: float
    kind: ProblemKind = ProblemKind.LASSO
    seed: int = 0
    reference_optimum: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "A", _frozen(np.atleast_2d(self.A)))
        object.__setattr__(self, "b", _frozen(np.atleast_1d(self.b)))
        if self.A.shape[0] != self.b.shape[0]:
            raise ConfigurationError("A and b have incompatible shapes")
        if not self.lipschitz > 0:
            raise ConfigurationError("lipschitz constant must be positive")
        object.__setattr__(self, "_H", _frozen(self.A.T @ self.A))
        object.__setattr__(self, "_Atb", _frozen(self.A.T @ self.b))

    @property
    def dim(self):
        return self.A.shape[1]

    @property
    def rows(self):
        return self.A.shape[0]

    def smooth_value(self, x):
        r = self.A @ x - self.b
        return 0.5 * float(r @ r)

    def smooth_grad(self, x):
        return self._H @ x - self._Atb

    def nonsmooth_value(self, x):
        if self.l1_weight == 0:
            return 0.0
        return self.l1_weight * float(np.abs(x).sum())

    def prox(self, y, scale):
        return prox_l1(y, scale, self.l1_weight)

    def value(self, x):
        return self.smooth_value(x) + self.nonsmooth_value(x)

    def bregman(self, x, z):
        """``f(z) - f(x) - grad f(x)^T (z - x)`` evaluated without cancellation."""
        d = self.A @ (np.asarray(z) - np.asarray(x))
        return 0.5 * float(d @ d)

    def gap(self, x):
        if self.reference_optimum is None:
            raise ConfigurationError("instance has no reference optimum")
        return self.value(x) - self.reference_optimum[1]

    def with_reference(self, x_star, f_star):
        return dataclasses.replace(self, reference_optimum=(_frozen(x_star), float(f_star)))


def instance_from_data(A, b, l1_weight=0.0, kind=ProblemKind.LASSO, seed=0, lipschitz=None):
    """Wrap explicit data; the Lipschitz constant defaults to a power-iteration estimate."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if lipschitz is None:
        lipschitz = power_iteration(A, seed=seed)
    return ProblemInstance(A=A, b=b, l1_weight=float(l1_weight), lipschitz=lipschitz,
                           kind=ProblemKind(kind), seed=seed)


def _orthonormal(rng, rows, cols):
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def _singular_values(rank, conditioning):
    if rank == 1:
        return np.ones(1)
    eig = np.logspace(0.0, -math.log10(conditioning), rank)
    return np.sqrt(eig)


def make_lasso(cfg: GeneratorConfig) -> ProblemInstance:
    """Seeded lasso ``0.5*||A x - b||^2 + lam*||x||_1``.

    ``A = U diag(s) V^T`` with Haar-random orthonormal factors and ``s**2``
    log-spaced over ``[1/conditioning, 1]``; ``b = A x_true + 0.01 * noise``
    with standard normal ``x_true`` and noise.
    """
    if ProblemKind(cfg.kind) is not ProblemKind.LASSO:
        raise ConfigurationError(f"make_lasso needs kind=lasso, got {cfg.kind}")
    rng = np.random.default_rng(cfg.seed)
    rank = min(cfg.dim, cfg.data_rows)
    U = _orthonormal(rng, cfg.data_rows, rank)
    V = _orthonormal(rng, cfg.dim, rank)
    s = _singular_values(rank, cfg.conditioning)
    A = (U * s) @ V.T
    x_true = rng.standard_normal(cfg.dim)
    b = A @ x_true + 0.01 * rng.standard_normal(cfg.data_rows)
    return instance_from_data(A, b, cfg.l1_weight, ProblemKind.LASSO, cfg.seed)


def make_quadratic(cfg: GeneratorConfig) -> ProblemInstance:
    """Seeded ``0.5*(x - c)^T H (x - c) [+ lam*||x||_1]`` with ``H = A^T A`` square.

    ``kind=smooth_only`` drops the l1 term regardless of ``l1_weight``.
    """
    kind = ProblemKind(cfg.kind)
    if kind is ProblemKind.LASSO:
        raise ConfigurationError("make_quadratic needs kind=quadratic or smooth_only")
    rng = np.random.default_rng(cfg.seed)
    V = _orthonormal(rng, cfg.dim, cfg.dim)
    s = _singular_values(cfg.dim, cfg.conditioning)
    A = s[:, None] * V.T
    c = rng.standard_normal(cfg.dim)
    weight = 0.0 if kind is ProblemKind.SMOOTH_ONLY else cfg.l1_weight
    return instance_from_data(A, A @ c, weight, kind, cfg.seed)


def make_instance(cfg: GeneratorConfig) -> ProblemInstance:
    if ProblemKind(cfg.kind) is ProblemKind.LASSO:
        return make_lasso(cfg)
    return make_quadratic(cfg)


def gradient_mapping(inst: ProblemInstance, y, alpha):
    """``D_alpha(y) = (y - prox_{alpha h}(y - alpha grad f(y))) / alpha``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    y = np.asarray(y, dtype=float)
    return (y - inst.prox(y - alpha * inst.smooth_grad(y), alpha)) / alpha


def model_value(inst: ProblemInstance, x, y, g, alpha):
    """Quadratic model ``f(y) + g^T(x-y) + ||x-y||^2/(2 alpha) + h(x)``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return (inst.smooth_value(y) + float(g @ d) + float(d @ d) / (2.0 * alpha)
            + inst.nonsmooth_value(x))


def sufficient_decrease(inst: ProblemInstance, y, cand, g, alpha):
    """Test ``F(cand) <= model_value(cand, y, g, alpha)``.

    ``h(cand)`` appears on both sides and cancels, and ``f(cand) - f(y)`` is
    taken through :meth:`ProblemInstance.bregman`, so the comparison is not
    swamped by rounding when ``cand`` is close to ``y``. Ties count as success;
    a nonfinite side counts as failure.
    """
    d = cand - y
    lhs = inst.bregman(y, cand) + float((inst.smooth_grad(y) - g) @ d)
    rhs = float(d @ d) / (2.0 * alpha)
    if not (math.isfinite(lhs) and math.isfinite(rhs)):
        return False
    return lhs <= rhs


_HEADER = ("dim", "rows", "lambda", "seed")


def write_instance(inst: ProblemInstance, path):
    """Flat column text: header line, one value row, then ``A`` row-major, then ``b``."""
    lines = [" ".join(_HEADER),
             f"{inst.dim} {inst.rows} {inst.l1_weight!r} {inst.seed}"]
    lines.extend(repr(float(v)) for v in inst.A.ravel())
    lines.extend(repr(float(v)) for v in inst.b)
    Path(path).write_text("\n".join(lines) + "\n")


def read_instance(path) -> ProblemInstance:
    tokens = Path(path).read_text().split()
    if tuple(tokens[:4]) != _HEADER:
        raise ConfigurationError(f"{path}: bad instance header")
    dim, rows, lam, seed = int(tokens[4]), int(tokens[5]), float(tokens[6]), int(tokens[7])
    values = np.array([float(t) for t in tokens[8:]])
    if values.size != rows * dim + rows:
        raise ConfigurationError(f"{path}: expected {rows * dim + rows} values, got {values.size}")
    A = values[: rows * dim].reshape(rows, dim)
    b = values[rows * dim:]
    return instance_from_data(A, b, lam, ProblemKind.LASSO, seed)
