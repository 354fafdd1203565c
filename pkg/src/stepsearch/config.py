"""TOML experiment configuration with a fixed ``problem/oracle/algo/run`` schema.

Command-line ``--set section.key=value`` overrides are applied on top of the
file; values are parsed as TOML literals, falling back to bare strings.
"""

from __future__ import annotations

import copy
import sys
from pathlib import Path

from .harness import Algo, ExperimentConfig
from .oracle import OracleSpec
from .problem import ConfigurationError, GeneratorConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["SCHEMA", "DEFAULTS", "load_config", "apply_overrides", "build_experiment",
           "parse_override"]

DEFAULTS = {
    "problem": {"kind": "lasso", "dim": 50, "data_rows": 100, "l1_weight": 0.01, "seed": 1,
                "conditioning": 1e6},
    "oracle": {"kappa_g": 0.2, "p": 0.8, "schedule": "auto", "beta": 1.0,
               "corruption_magnitude": 3.0, "biased": False},
    "algo": {"name": "ista", "gamma": 0.5, "alpha_1": 1.0},
    "run": {"epsilons": [1e-1, 3e-2, 1e-2, 3e-3, 1e-3], "epsilon": None, "trials": 50,
            "max_iters": None, "master_seed": 0, "workers": 1, "trial": 0},
}
SCHEMA = {section: frozenset(keys) for section, keys in DEFAULTS.items()}


def _check_keys(data, origin):
    unknown = []
    for section, body in data.items():
        if section not in SCHEMA:
            unknown.append(section)
            continue
        if not isinstance(body, dict):
            raise ConfigurationError(f"{origin}: [{section}] must be a table")
        unknown.extend(f"{section}.{k}" for k in body if k not in SCHEMA[section])
    if unknown:
        raise ConfigurationError(f"{origin}: unknown config keys: {', '.join(sorted(unknown))}")


def load_config(path=None) -> dict:
    """Defaults merged with the file at ``path`` (if any)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    try:
        data = tomllib.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    _check_keys(data, str(path))
    for section, body in data.items():
        cfg[section].update(body)
    return cfg


def parse_override(item):
    """``"section.key=value"`` -> ``(section, key, value)``."""
    name, sep, raw = item.partition("=")
    section, dot, key = name.strip().partition(".")
    if not sep or not dot or not key:
        raise ConfigurationError(f"override {item!r} is not of the form section.key=value")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return section, key, value


def apply_overrides(cfg: dict, overrides) -> dict:
    """Overrides win over file values."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        section, key, value = parse_override(item)
        _check_keys({section: {key: value}}, "--set")
        cfg[section][key] = value
    return cfg


def _auto_schedule(algo, oracle):
    if oracle["schedule"] != "auto":
        return oracle["schedule"]
    if algo is Algo.ISTA:
        return "ista_decay"
    if algo is Algo.FISTA:
        return "fista_decay"
    return "none"


def build_experiment(cfg: dict) -> ExperimentConfig:
    """Validate the merged mapping and turn it into an :class:`ExperimentConfig`."""
    try:
        algo = Algo(str(cfg["algo"]["name"]).replace("-", "_"))
    except ValueError:
        raise ConfigurationError(
            f"algo.name must be one of ista, fista, fista_bktr; got {cfg['algo']['name']!r}")
    o = cfg["oracle"]
    try:
        problem = GeneratorConfig(**cfg["problem"])
        oracle = OracleSpec(kappa_g=float(o["kappa_g"]), p=float(o["p"]),
                            schedule=_auto_schedule(algo, o), beta=float(o["beta"]),
                            corruption_magnitude=float(o["corruption_magnitude"]),
                            biased=bool(o["biased"]))
        run = cfg["run"]
        return ExperimentConfig(
            problem=problem, oracle=oracle, algo=algo, gamma=float(cfg["algo"]["gamma"]),
            alpha_1=float(cfg["algo"]["alpha_1"]), epsilons=tuple(run["epsilons"]),
            trials=int(run["trials"]), max_iters=run["max_iters"],
            master_seed=int(run["master_seed"]), workers=int(run["workers"]))
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc
