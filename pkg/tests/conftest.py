import numpy as np
import pytest

from radioloc.scenario import NetworkScenario, generate_benchmark_scenario


@pytest.fixture(scope="session")
def bench():
    return generate_benchmark_scenario(12, 50, 1.0, 0.3, seed=1)


@pytest.fixture
def tri():
    """Three anchors on the unit corner and one agent at (0.3, 0.4)."""
    return NetworkScenario.from_positions([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0.3, 0.4]])


def rmse(est, truth):
    return float(np.sqrt(np.mean(np.sum((np.asarray(est) - np.asarray(truth)) ** 2, axis=1))))
