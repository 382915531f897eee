import numpy as np
import pytest

from converge.dsl import parse_system
from converge.registry import load_registry

AFFINE = "dim 1\nf1 = 0.5*x1 + sin(k)\n"
LINEAR = "dim 2\nf1 = 0.5*x1 + 0.4*x2\nf2 = 0.5*x2\n"
LINEAR_123 = "dim 2\nf1 = x1 + 2*x2\nf2 = 3*x2\n"


@pytest.fixture(scope="session")
def registry():
    return load_registry()


@pytest.fixture(scope="session")
def ex1(registry):
    return registry["ex1"].system()


@pytest.fixture(scope="session")
def ex2(registry):
    return registry["ex2"].system()


@pytest.fixture(scope="session")
def ex3(registry):
    return registry["ex3"].system()


@pytest.fixture(scope="session")
def ex4(registry):
    return registry["ex4"].system()


@pytest.fixture(scope="session")
def affine():
    return parse_system(AFFINE, name="affine")


@pytest.fixture(scope="session")
def linear():
    return parse_system(LINEAR, name="linear")


def affine_reference(k, terms=200):
    """Bounded solution of x(k+1) = 0.5 x + sin(k) as a truncated series."""
    j = np.arange(1, terms + 1)
    return np.array([np.sum(0.5 ** (j - 1) * np.sin(kk - j)) for kk in np.atleast_1d(k)])


def ex2_closed_form(k, k0, xi):
    d = k - k0
    return k0 / 2.0 ** d - k + xi / 2.0 ** d


def ex3_closed_form(k, k0, xi):
    return xi / np.sqrt((k - k0) * xi ** 2 + 1)
