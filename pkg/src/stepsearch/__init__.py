"""Stochastic ISTA and FISTA step search with a Monte Carlo verification harness."""

from .fista import fista_bktr_deterministic, run_fista
from .harness import ExperimentConfig, compute_reference, run_monte_carlo
from .ista import run_ista
from .oracle import OracleSpec, Schedule, StochasticOracle
from .problem import ConfigurationError, GeneratorConfig, ProblemInstance, make_instance
from .trace import check_invariants, detect_hitting_time, tally_counters

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ExperimentConfig",
    "GeneratorConfig",
    "OracleSpec",
    "ProblemInstance",
    "Schedule",
    "StochasticOracle",
    "check_invariants",
    "compute_reference",
    "detect_hitting_time",
    "fista_bktr_deterministic",
    "make_instance",
    "run_fista",
    "run_ista",
    "run_monte_carlo",
    "tally_counters",
]
