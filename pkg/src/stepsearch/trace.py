"""Per-iteration audit records, hitting times, counters and invariant checks.

Records of one trajectory form a list whose first element is the initial state
(``k = 0``, flags unset); element ``k`` describes the state after iteration
``k``. The same list round-trips through :func:`write_trace_csv` /
:func:`read_trace_csv`, and every check here is a pure function of it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TRACE_COLUMNS",
    "IterationRecord",
    "CounterSet",
    "CheckResult",
    "InvariantReport",
    "detect_hitting_time",
    "tally_counters",
    "check_invariants",
    "write_trace_csv",
    "read_trace_csv",
]

TRACE_COLUMNS = ("k", "success", "true", "large", "large_plus", "alpha", "alpha_succ",
                 "t", "theta", "gap", "lambda", "u_norm")

NAN = float("nan")


@dataclass
class IterationRecord:
    """State after iteration ``k``.

    ``large`` is ``alpha > alpha_bar`` and ``large_plus`` is
    ``alpha >= alpha_bar``. For ISTA, ``u_norm`` holds ``||x_k - x*||``;
    for FISTA it holds ``||(t_k - 1) x_prev_k + x* - t_k x_k||``.
    """

    k: int
    success: bool | None = None
    is_true: bool | None = None
    large: bool | None = None
    large_plus: bool | None = None
    alpha: float = NAN
    alpha_succ: float = NAN
    t: float = NAN
    theta: float = NAN
    gap: float = NAN
    lam: float = NAN
    u_norm: float = NAN
    injected: float = NAN


@dataclass
class CounterSet:
    n_eps: int | None
    censored: bool
    N_G: int = 0
    N_F: int = 0
    N_FS: int = 0
    N_T: int = 0
    N_U: int = 0
    accounting_slack: float = NAN
    accounting_applicable: bool = False
    accounting_holds: bool | None = None

    def as_dict(self):
        return {"N_G": self.N_G, "N_F": self.N_F, "N_FS": self.N_FS,
                "N_T": self.N_T, "N_U": self.N_U}


def detect_hitting_time(gaps, epsilon):
    """First ``k >= 1`` with ``gaps[k] <= epsilon``; 0 if the start already is; else None.

    ``None`` means the sequence is censored.
    """
    gaps = np.asarray(gaps, dtype=float)
    if gaps.size == 0:
        raise ValueError("empty gap sequence")
    hits = np.flatnonzero(gaps <= epsilon)
    return int(hits[0]) if hits.size else None


def _flag_array(records, name):
    return np.array([bool(getattr(r, name)) for r in records], dtype=bool)


def tally_counters(records, n_eps, alpha_bar, gamma=None, alpha_1=None) -> CounterSet:
    """Counters over iterations ``1 <= k <= n_eps - 1`` (all iterations if censored).

    ``N_G``/``N_T``/``N_F``/``N_FS`` use ``alpha_k >= alpha_bar``; ``N_U`` uses
    ``alpha_k > alpha_bar``. When ``alpha_1 >= alpha_bar`` and ``alpha_bar``
    lies on the step-size grid ``alpha_1 * gamma**j``, the realized path is
    also tested against ``N_U <= N_FS + N_G + log_gamma(alpha_bar/alpha_1)``;
    the slack is always reported, never raised.
    """
    censored = n_eps is None
    body = [r for r in records if r.k >= 1]
    if not censored:
        body = [r for r in body if r.k <= n_eps - 1]
        if len(body) < max(n_eps - 1, 0):
            raise ValueError("records do not cover iterations 1 .. n_eps - 1")
    alpha = np.array([r.alpha for r in body], dtype=float)
    large = alpha > alpha_bar
    large_plus = alpha >= alpha_bar
    true = _flag_array(body, "is_true")
    succ = _flag_array(body, "success")
    cs = CounterSet(
        n_eps=n_eps, censored=censored,
        N_G=int(np.sum(large_plus & true & succ)),
        N_F=int(np.sum(large_plus & ~true)),
        N_FS=int(np.sum(large_plus & ~true & succ)),
        N_T=int(np.sum(large_plus & true)),
        N_U=int(np.sum(large & ~succ)),
    )
    if gamma is not None and alpha_1 is not None:
        offset = math.log(alpha_bar / alpha_1) / math.log(gamma)
        # the bound needs alpha_bar on the grid alpha_1 * gamma**j, otherwise a
        # success just below alpha_bar re-enters the large region uncounted
        on_grid = alpha_1 * gamma ** round(offset) == alpha_bar
        cs.accounting_applicable = alpha_1 >= alpha_bar and on_grid
        cs.accounting_slack = cs.N_FS + cs.N_G + offset - cs.N_U
        if cs.accounting_applicable:
            cs.accounting_holds = cs.accounting_slack >= -1e-9
    return cs


@dataclass
class CheckResult:
    name: str
    status: str  # "pass", "fail" or "not_applicable"
    checked: int = 0
    violations: int = 0
    worst_residual: float = NAN
    detail: str = ""

    @property
    def passed(self):
        return self.status != "fail"


@dataclass
class InvariantReport:
    algo: str
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks.values())

    def add(self, result: CheckResult):
        self.checks[result.name] = result

    def as_dict(self):
        return {
            "algo": self.algo,
            "passed": self.passed,
            "checks": {n: {"status": c.status, "checked": c.checked,
                           "violations": c.violations,
                           "worst_residual": None if math.isnan(c.worst_residual)
                           else c.worst_residual,
                           "detail": c.detail}
                       for n, c in self.checks.items()},
        }

    def lines(self):
        for c in self.checks.values():
            yield (f"{c.name:<26} {c.status:<14} checked={c.checked:<7d} "
                   f"violations={c.violations:<5d} worst={c.worst_residual:.3e}")


def _inequality(name, lhs, rhs, scale, rtol):
    """``lhs <= rhs`` elementwise, up to ``rtol * scale``."""
    lhs, rhs, scale = (np.asarray(a, dtype=float) for a in (lhs, rhs, scale))
    if lhs.size == 0:
        return CheckResult(name, "pass", 0, 0, 0.0, "no applicable iterations")
    scale = np.maximum(scale, np.finfo(float).tiny)
    resid = (lhs - rhs) / scale
    bad = ~(resid <= rtol)
    return CheckResult(name, "fail" if bad.any() else "pass", int(lhs.size),
                       int(bad.sum()), float(np.nanmax(resid)))


def _equality(name, a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size == 0:
        return CheckResult(name, "pass", 0, 0, 0.0, "no applicable iterations")
    bad = a != b
    resid = np.abs(a - b)
    return CheckResult(name, "fail" if bad.any() else "pass", int(a.size), int(bad.sum()),
                       float(np.nanmax(resid)) if resid.size else 0.0)


def _na(name, why):
    return CheckResult(name, "not_applicable", detail=why)


class _Columns:
    def __init__(self, records):
        if not records or records[0].k != 0:
            raise ValueError("trace must start with the k = 0 record")
        self.k = np.array([r.k for r in records])
        self.alpha = np.array([r.alpha for r in records], dtype=float)
        self.alpha_succ = np.array([r.alpha_succ for r in records], dtype=float)
        self.t = np.array([r.t for r in records], dtype=float)
        self.theta = np.array([r.theta for r in records], dtype=float)
        self.gap = np.array([r.gap for r in records], dtype=float)
        self.lam = np.array([r.lam for r in records], dtype=float)
        self.u = np.array([r.u_norm for r in records], dtype=float)
        self.succ = np.array([bool(r.success) for r in records])
        self.succ[0] = False
        self.true = np.array([bool(r.is_true) for r in records])
        self.has_flags = all(r.large is not None and r.is_true is not None
                             for r in records[1:])
        self.large = np.array([bool(r.large) for r in records])
        self.large_plus = np.array([bool(r.large_plus) for r in records])


def _true_small_step(c: _Columns):
    if not c.has_flags:
        return _na("true_small_step_success", "true/large flags missing")
    idx = np.flatnonzero(c.true[1:] & ~c.large[1:]) + 1
    bad = ~c.succ[idx]
    return CheckResult("true_small_step_success", "fail" if bad.any() else "pass", int(idx.size),
                       int(bad.sum()), float(bad.sum()))


def _gap_consistency(c: _Columns):
    idx = np.flatnonzero(~c.succ[1:]) + 1
    res = _equality("gap_consistency", np.r_[c.gap[idx], c.u[idx]],
                    np.r_[c.gap[idx - 1], c.u[idx - 1]])
    res.checked = int(idx.size)
    return res


def _step_dynamics(c: _Columns, gamma):
    if gamma is None:
        return _na("step_dynamics", "gamma unknown")
    nxt = c.alpha[2:]
    cur = c.alpha[1:-1]
    expected = np.where(c.succ[1:-1], cur / gamma, cur * gamma)
    return _equality("step_dynamics", nxt, expected)


def _flag_consistency(c: _Columns, alpha_bar):
    if alpha_bar is None or not c.has_flags:
        return _na("flag_consistency", "alpha_bar unknown")
    a = c.alpha[1:]
    bad = (c.large[1:] != (a > alpha_bar)) | (c.large_plus[1:] != (a >= alpha_bar))
    return CheckResult("flag_consistency", "fail" if bad.any() else "pass", int(a.size),
                       int(bad.sum()), float(bad.sum()))


def _pair_sum(lam):
    """``sum_k lam_k * (sum_{i<k} lam_i) + 2 * sum_k lam_k^2``, cumulatively."""
    before = np.cumsum(lam) - lam
    return np.cumsum(lam * before) + 2.0 * np.cumsum(lam * lam)


def _ista_checks(c: _Columns, rtol, report):
    if np.isnan(c.gap).any() or np.isnan(c.u[:]).any():
        for name in ("ista_distance_step", "ista_cumulative_progress"):
            report.add(_na(name, "reference optimum unavailable"))
        return
    idx = np.flatnonzero(c.succ[1:]) + 1
    a, v, lam = c.alpha[idx], c.gap[idx], c.lam[idx]
    u_now, u_prev = c.u[idx], c.u[idx - 1]
    lhs = u_now**2 - u_prev**2
    rhs = -2.0 * a * v + lam * u_prev
    scale = np.max(np.abs([u_now**2, u_prev**2, 2.0 * a * v, lam * u_prev]), axis=0) \
        if idx.size else np.zeros(0)
    report.add(_inequality("ista_distance_step", lhs, rhs, scale, rtol))

    lam_all = c.lam[1:]
    progress = np.cumsum(np.where(c.succ[1:], 2.0 * c.alpha[1:] * c.gap[1:], 0.0))
    rhs = 2.0 * c.u[0] ** 2 + _pair_sum(lam_all)
    report.add(_inequality("ista_cumulative_progress", progress, rhs, np.maximum(np.abs(progress), rhs), rtol))


def _fista_checks(c: _Columns, gamma, rtol, rtol_exact, report):
    succ = np.flatnonzero(c.succ[1:]) + 1
    fail = np.flatnonzero(~c.succ[1:]) + 1

    lhs = c.t[succ] * (c.t[succ] - 1.0)
    rhs = c.theta[succ - 1] * c.t[succ - 1] ** 2
    res = _inequality("fista_step_identity", np.abs(lhs - rhs), 0.0,
                      np.maximum(np.abs(lhs), np.abs(rhs)), rtol_exact)
    report.add(res)

    if gamma is None:
        report.add(_na("theta_dynamics", "gamma unknown"))
    else:
        k = np.arange(1, c.k.size)
        expected = np.where(c.succ[k], gamma, c.theta[k - 1] / gamma)
        report.add(_inequality("theta_dynamics", np.abs(c.theta[k] - expected), 0.0,
                               np.abs(expected), rtol_exact))

    left = c.alpha_succ[succ - 1] * c.t[succ - 1] ** 2
    right = c.alpha[succ] * c.t[succ] * (c.t[succ] - 1.0)
    report.add(_inequality("momentum_recursion", right, left, np.maximum(left, right), rtol_exact))

    sqrt_sum = np.cumsum(np.where(c.succ, np.sqrt(np.where(c.succ, c.alpha, 0.0)), 0.0)) / 2.0
    left = c.alpha_succ * c.t**2
    right = sqrt_sum**2
    report.add(_inequality("momentum_growth", right, left, np.maximum(left, right), rtol_exact))

    if np.isnan(c.gap).any() or np.isnan(c.u).any():
        for name in ("energy_constant_on_failure", "energy_step_bound", "energy_cumulative_bound"):
            report.add(_na(name, "reference optimum unavailable"))
        return
    w = 2.0 * c.alpha_succ * c.t**2 * c.gap
    m = w + c.u**2
    report.add(_equality("energy_constant_on_failure", m[fail], m[fail - 1]))

    lhs = w[succ] - w[succ - 1]
    rhs = c.u[succ - 1] ** 2 - c.u[succ] ** 2 + c.lam[succ] * c.u[succ - 1]
    scale = np.max(np.abs([w[succ], w[succ - 1], c.u[succ - 1] ** 2, c.u[succ] ** 2,
                           c.lam[succ] * c.u[succ - 1]]), axis=0) if succ.size else np.zeros(0)
    report.add(_inequality("energy_step_bound", lhs, rhs, scale, rtol))

    rhs = (3.0 * c.alpha_succ[0] * c.t[0] ** 2 * c.gap[0] + 2.0 * c.u[0] ** 2
           + _pair_sum(c.lam[1:]))
    lhs = w[1:]
    report.add(_inequality("energy_cumulative_bound", lhs, rhs, np.maximum(np.abs(lhs), np.abs(rhs)), rtol))


def check_invariants(records, algo, alpha_bar=None, gamma=None, rtol=1e-9,
                     rtol_exact=1e-12) -> InvariantReport:
    """Audit a trajectory against the per-iteration guarantees of its algorithm.

    ``algo`` is ``"ista"``, ``"fista"`` or ``"fista_bktr"``. Implication and
    equality checks have zero tolerance; inequalities use ``rtol`` relative to
    the largest term involved (``rtol_exact`` for the momentum identities).
    Checks whose inputs are missing are reported as not applicable.
    """
    algo = str(algo).replace("-", "_")
    if algo not in ("ista", "fista", "fista_bktr"):
        raise ValueError(f"unknown algorithm {algo!r}")
    c = _Columns(records)
    report = InvariantReport(algo)
    report.add(_true_small_step(c))
    report.add(_flag_consistency(c, alpha_bar))
    report.add(_step_dynamics(c, gamma))
    report.add(_gap_consistency(c))
    if algo == "ista":
        _ista_checks(c, rtol, report)
    elif np.isnan(c.t).any() or np.isnan(c.theta).any() or np.isnan(c.alpha_succ).any():
        report.add(_na("fista_checks", "momentum columns missing"))
    else:
        _fista_checks(c, gamma, rtol, rtol_exact, report)
    return report


def _fmt_bool(v):
    return "" if v is None else str(int(bool(v)))


def _fmt_float(v):
    return "nan" if v is None or math.isnan(v) else format(v, ".17g")


def write_trace_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in records:
            w.writerow([r.k, _fmt_bool(r.success), _fmt_bool(r.is_true), _fmt_bool(r.large),
                        _fmt_bool(r.large_plus)]
                       + [_fmt_float(x) for x in (r.alpha, r.alpha_succ, r.t, r.theta,
                                                  r.gap, r.lam, r.u_norm)])


def _parse_bool(s):
    return None if s == "" else bool(int(s))


def read_trace_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace columns {header}")
        out = []
        for row in reader:
            out.append(IterationRecord(
                k=int(row[0]), success=_parse_bool(row[1]), is_true=_parse_bool(row[2]),
                large=_parse_bool(row[3]), large_plus=_parse_bool(row[4]),
                alpha=float(row[5]), alpha_succ=float(row[6]), t=float(row[7]),
                theta=float(row[8]), gap=float(row[9]), lam=float(row[10]),
                u_norm=float(row[11])))
    return out
