import math

import pytest
from hypothesis import settings

from apfront.potentials import almost_mathieu, constant, periodic

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def const1():
    return constant(1.0)


@pytest.fixture(scope="session")
def per2():
    return periodic([0.5, 1.5])


@pytest.fixture(scope="session")
def amo_super():
    return almost_mathieu(2.0, 5.0)


@pytest.fixture(scope="session")
def amo_sub():
    return almost_mathieu(0.5, 3.0)


def golden_min_oracle(c0):
    """min over lambda > 0 of (2 cosh(lambda) - 2 + c0) / lambda, by scipy."""
    from scipy.optimize import minimize_scalar

    res = minimize_scalar(lambda l: (2.0 * math.cosh(l) - 2.0 + c0) / l, bounds=(1e-3, 10.0),
                          method="bounded", options={"xatol": 1e-12})
    return res.fun, res.x
