import numpy as np
import pytest

from openmaps.maps import custom, logistic4, tent2
from openmaps.potentials import Potential, normalize


@pytest.fixture(scope="session")
def tent():
    return tent2()


@pytest.fixture(scope="session")
def logistic():
    return logistic4()


@pytest.fixture(scope="session")
def tent_pot(tent):
    return normalize(Potential.geometric(1.0), tent)


@pytest.fixture(scope="session")
def logistic_pot(logistic):
    return normalize(Potential.geometric(1.0), logistic)


@pytest.fixture(scope="session")
def flat_critical_map():
    """Unimodal map whose critical orbit 1/2 -> 1 -> 0 -> 0 ... has D_n = 2 for all n."""
    return custom(
        [
            {"lo": 0.0, "hi": 0.5, "forward": lambda x: x + 2 * x ** 2, "derivative": lambda x: 1 + 4 * x,
             "inverse": lambda y: (-1 + np.sqrt(1 + 8 * y)) / 4},
            {"lo": 0.5, "hi": 1.0, "forward": lambda x: 2 - 2 * x, "derivative": lambda x: np.full_like(x, -2.0),
             "inverse": lambda y: 1 - y / 2},
        ],
        crit=[(0.5, 1.0)],
    )
