import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

sys.path.insert(0, str(Path(__file__).parent))

from pintuq.core import ParameterSample, SolverConfig
from pintuq.models import LinearModel


class ScalarDecay(LinearModel):
    """Test-only scalar model u' = -lambda*u; the decay rate is the parameter."""

    name = "scalar-decay"
    parameter_dim = 1
    supports = ((1e-6, 1e6),)

    def __init__(self):
        self.nx = 1

    @property
    def cell_volume(self):
        return 1.0

    def linear_system(self, xi):
        lam = xi.values[0]
        A = sp.csc_matrix(np.array([[lam]]))
        return A, lambda t: np.zeros(1)

    def initial_condition(self, xi):
        return np.ones(1)


@pytest.fixture
def scalar_model():
    return ScalarDecay()


@pytest.fixture
def cfg():
    return SolverConfig(seed=123)


def sample(*values, id=0):
    return ParameterSample(np.array(values, dtype=float), id=id)
