import numpy as np
import pytest

from bayespace.experiments import ExperimentConfig, make_stereo
from bayespace.measures import GaussianMeasure


@pytest.fixture(scope="session")
def stereo():
    """Default inverse-distance problem (prior, measurement, posterior)."""
    return make_stereo(ExperimentConfig())


@pytest.fixture(scope="session")
def std_normal_1d():
    return GaussianMeasure(np.zeros(1), np.eye(1))
