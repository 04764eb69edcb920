import numpy as np
import pytest

from iphfit.model import Grid, IPHModel
from iphfit.simulate import iter_paths

# Fixed 2-state, 2-interval model used by every conditional-law oracle test.
ORACLE_TAU = 1.3
ORACLE_EPS = 0.005
ORACLE_PATHS = 10**6


def oracle_model():
    T = np.array(
        [
            [[-2.0, 1.2], [0.3, -1.5]],
            [[-3.0, 0.8], [0.5, -2.2]],
        ]
    )
    return IPHModel([0.6, 0.4], Grid.from_interior([0.9]), T)


@pytest.fixture(scope="session")
def conditional_batch():
    """Simulate ORACLE_PATHS paths and keep those absorbing inside
    (tau - eps, tau + eps]; shared by the Lemma-style conditional tests,
    the E-step oracle test and the acceptance suite."""
    model = oracle_model()
    accepted = [
        path
        for path in iter_paths(model, ORACLE_PATHS, seed=20_260_810)
        if ORACLE_TAU - ORACLE_EPS < path.absorption_time <= ORACLE_TAU + ORACLE_EPS
    ]
    return model, accepted
