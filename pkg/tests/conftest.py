import numpy as np
import pytest

from stepsearch.harness import attach_reference
from stepsearch.problem import GeneratorConfig, instance_from_data, make_instance


@pytest.fixture(scope="session")
def lasso():
    """50-dim lasso used across modules, with its reference optimum."""
    return attach_reference(make_instance(GeneratorConfig(seed=1)))


@pytest.fixture(scope="session")
def small_lasso():
    cfg = GeneratorConfig(dim=10, data_rows=20, l1_weight=0.05, seed=3, conditioning=1e3)
    return attach_reference(make_instance(cfg))


@pytest.fixture(scope="session")
def lasso_1d():
    inst = instance_from_data(np.array([[1.0]]), np.array([2.0]), l1_weight=1.0)
    return attach_reference(inst)
