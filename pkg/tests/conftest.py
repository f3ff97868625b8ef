import numpy as np
import pytest

from thornsim.core import silicon
from thornsim.potentials import ScreeningModel
from thornsim.xsection import FormFactorModel


@pytest.fixture(scope="session")
def si():
    return silicon("planar")


@pytest.fixture(scope="session")
def screening(si):
    return ScreeningModel.for_crystal(si)


@pytest.fixture(scope="session")
def ff(si):
    return FormFactorModel.for_crystal(si)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
