"""Batch command-line front end.

Exit codes: 0 success, 1 invariant violation or failed check, 2 configuration
error (bad config, unknown keys, refused overwrite, unusable instance).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .appendix import AppendixKind, simulate_appendix_process
from .config import apply_overrides, build_experiment, load_config
from .fista import fista_bktr_deterministic, run_fista
from .harness import Algo, ReferenceNotConverged, TrialFailed
from .ista import TrajectoryAborted, run_ista
from .problem import ConfigurationError, ProblemInstance, gradient_mapping, make_instance
from .trace import check_invariants, read_trace_csv, write_trace_csv

__all__ = ["main", "build_parser", "instance_fingerprint", "load_or_compute_reference"]

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML file with [problem], [oracle], "
                        "[algo] and [run] tables")
    common.add_argument("--output-dir", type=Path, default=Path("."),
                        help="directory for result files (created if absent)")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override a config value; "
                        "beats the config file; repeatable")
    common.add_argument("--force", action="store_true", help="overwrite existing results")

    parser = argparse.ArgumentParser(prog="stepsearch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="run one trajectory and audit it")
    p.add_argument("--algo", choices=["ista", "fista", "fista-bktr", "fista_bktr"])
    p.add_argument("--epsilon", type=float, help="target gap (default: run.epsilon or the "
                   "smallest of run.epsilons)")

    sub.add_parser("montecarlo", parents=[common], help="repeated trials over the epsilon grid")

    p = sub.add_parser("appendix", parents=[common], help="simulate the toy hitting-time processes")
    p.add_argument("--kind", action="append", choices=[k.value for k in AppendixKind])
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--horizon", type=int, default=10**6)

    sub.add_parser("reference", parents=[common], help="compute and cache the reference optimum")

    p = sub.add_parser("check-trace", parents=[common], help="re-audit a serialized trace")
    p.add_argument("trace", type=Path)
    p.add_argument("--meta", type=Path, help="metadata JSON (default: <trace>.meta.json "
                   "beside the trace)")
    return parser


def _dump_json(obj, path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _claim(out_dir: Path, names, force):
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / n for n in names]
    taken = [str(p) for p in paths if p.exists()]
    if taken and not force:
        raise ConfigurationError(f"refusing to overwrite {', '.join(taken)} (use --force)")
    return paths


def instance_fingerprint(inst: ProblemInstance):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(inst.A).tobytes())
    h.update(np.ascontiguousarray(inst.b).tobytes())
    h.update(repr(inst.l1_weight).encode())
    return h.hexdigest()


def load_or_compute_reference(inst: ProblemInstance, cache: Path | None):
    """Reuse ``cache`` when it matches this instance, else solve afresh."""
    fp = instance_fingerprint(inst)
    if cache is not None and cache.exists():
        data = json.loads(cache.read_text())
        if data.get("fingerprint") == fp:
            return inst.with_reference(np.array(data["x_star"], dtype=float), data["f_star"])
    return harness.attach_reference(inst)


def _reference_payload(inst):
    x_star, f_star = inst.reference_optimum
    dnorm = float(np.linalg.norm(gradient_mapping(inst, x_star, 1.0 / inst.lipschitz)))
    return {"fingerprint": instance_fingerprint(inst), "f_star": f_star,
            "x_star": [float(v) for v in x_star], "gradient_mapping_norm": dnorm,
            "lipschitz": inst.lipschitz, "dim": inst.dim, "rows": inst.rows,
            "l1_weight": inst.l1_weight}


def _setup(args):
    raw = apply_overrides(load_config(args.config), args.overrides)
    if getattr(args, "algo", None):
        raw["algo"]["name"] = args.algo.replace("-", "_")
    return raw, build_experiment(raw)


def _instance(exp, out_dir):
    inst = make_instance(exp.problem)
    return load_or_compute_reference(inst, out_dir / "reference.json")


def cmd_reference(args):
    _, exp = _setup(args)
    (path,) = _claim(args.output_dir, ["reference.json"], args.force)
    inst = harness.attach_reference(make_instance(exp.problem))
    payload = _reference_payload(inst)
    _dump_json(payload, path)
    print(f"F* = {payload['f_star']!r}  ||D|| = {payload['gradient_mapping_norm']:.3e}  -> {path}")
    return EXIT_OK


def cmd_solve(args):
    raw, exp = _setup(args)
    trace_p, meta_p, inv_p = _claim(
        args.output_dir, ["trace.csv", "trace.meta.json", "invariants.json"], args.force)
    inst = _instance(exp, args.output_dir)
    eps = args.epsilon or raw["run"]["epsilon"] or min(exp.epsilons)
    seed = harness.derive_seed(exp.master_seed, 0, int(raw["run"]["trial"]))
    max_iters = exp.max_iters or int(math.ceil(100 * exp.complexity_bound(inst)(eps)))
    if exp.algo is Algo.ISTA:
        summ = run_ista(inst, exp.oracle, exp.gamma, exp.alpha_1, eps, max_iters, seed=seed)
    elif exp.algo is Algo.FISTA:
        summ = run_fista(inst, exp.oracle, exp.gamma, exp.alpha_1, eps, max_iters, seed=seed)
    else:
        summ = fista_bktr_deterministic(inst, exp.gamma, exp.alpha_1, eps, max_iters)
    alpha_bar, _ = exp.bound_inputs(inst)
    report = check_invariants(summ.records, exp.algo.value, alpha_bar, exp.gamma)

    write_trace_csv(summ.records, trace_p)
    _dump_json({"algo": exp.algo.value, "alpha_bar": alpha_bar, "gamma": exp.gamma,
                "alpha_1": exp.alpha_1, "epsilon": eps, "seed": summ.seed,
                "n_eps": summ.n_eps, "censored": summ.censored, "iterations": summ.iterations,
                "counters": summ.counters.as_dict(), "digest": summ.digest,
                "lambda_sq_sum": summ.lambda_sq_sum}, meta_p)
    _dump_json(report.as_dict(), inv_p)
    print(f"{exp.algo.value}: N_eps = {summ.n_eps} (epsilon={eps!r}, seed={summ.seed})")
    for line in report.lines():
        print("  " + line)
    return EXIT_OK if report.passed else EXIT_VIOLATION


def cmd_montecarlo(args):
    _, exp = _setup(args)
    paths = _claim(args.output_dir, ["summary.csv", "trials.csv", "scaling.json"], args.force)
    inst = _instance(exp, args.output_dir)
    report = harness.run_monte_carlo(exp, inst)
    harness.write_summary_csv(report, paths[0])
    harness.write_trials_csv(report, paths[1])
    harness.write_scaling_json(report, paths[2])
    print(f"{report.algo}: slope {report.slope:.3f} +/- {report.stderr:.3f}; "
          f"censored {sum(report.censored)}; checks {'pass' if report.passed else 'FAIL'}")
    for eps, m, b in zip(report.epsilons, report.means, report.theorem_bound):
        print(f"  eps={eps:<8g} mean N_eps={m:<10.2f} bound={b:.4g}")
    return EXIT_OK if report.passed else EXIT_VIOLATION


def cmd_appendix(args):
    raw, exp = _setup(args)
    (path,) = _claim(args.output_dir, ["appendix.json"], args.force)
    kinds = args.kind or [k.value for k in AppendixKind]
    out = []
    for i, kind in enumerate(kinds):
        seed = harness.derive_seed(exp.master_seed, i, 0)
        try:
            res = simulate_appendix_process(kind, args.epsilon, args.trials, seed, args.horizon)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
        out.append(res.as_json())
        print(f"{kind}: E[N_eps] ~ {res.mean_hitting_time:.4f} +/- {res.stderr:.4f} "
              f"(analytic {res.analytic_hitting_time})")
    _dump_json({"epsilon": args.epsilon, "trials": args.trials, "processes": out}, path)
    return EXIT_OK


def cmd_check_trace(args):
    meta_path = args.meta or args.trace.with_suffix(".meta.json")
    try:
        meta = json.loads(meta_path.read_text())
        records = read_trace_csv(args.trace)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot load trace: {exc}") from exc
    report = check_invariants(records, meta["algo"], meta.get("alpha_bar"), meta.get("gamma"))
    for line in report.lines():
        print(line)
    print("PASS" if report.passed else "FAIL")
    return EXIT_OK if report.passed else EXIT_VIOLATION


COMMANDS = {"solve": cmd_solve, "montecarlo": cmd_montecarlo, "appendix": cmd_appendix,
            "reference": cmd_reference, "check-trace": cmd_check_trace}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, ReferenceNotConverged) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrialFailed, TrajectoryAborted) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
