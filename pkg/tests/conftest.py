import numpy as np
import pytest

from dyncox.fitting import FitConfig, fit_grid
from dyncox.simulate import ScenarioSpec, scenario, simulate


@pytest.fixture(scope="session")
def main30():
    """One mid-sized draw of the full model: trends, two covariates."""
    truth = scenario(ScenarioSpec(name="main", n_nodes=30, seed=7))
    return truth, simulate(truth, 7)


@pytest.fixture(scope="session")
def fit30(main30):
    truth, log = main30
    config = FitConfig(grid=np.array([0.2, 0.4, 0.6, 0.8]))
    return fit_grid(log, truth.covariates, config)


@pytest.fixture(scope="session")
def null40():
    """A flat-curve draw (both trend knobs zero), for test statistics."""
    truth = scenario(ScenarioSpec(name="trend_test", n_nodes=40, seed=11))
    return truth, simulate(truth, 11)
