"""Shared fixtures: small fixed datasets and models reused across test files."""
import warnings

import numpy as np
import pytest

from cutboot import zoo
from cutboot.core import CutDataset

LOG_PHI_0 = -0.5 * np.log(2.0 * np.pi)  # standard-normal log-density at 0


@pytest.fixture(scope="session")
def toy_model():
    return zoo.toy_model()


@pytest.fixture(scope="session")
def biased_model():
    return zoo.biased_model()


@pytest.fixture(scope="session")
def toy_data_small():
    return zoo.toy_generate(400, rho=0.8, sigma2=1.0, seed=11)


@pytest.fixture(scope="session")
def biased_data_small():
    return zoo.biased_generate(n1=60, n2=600, sigma1_sq=1.0, sigma2_sq=0.5, seed=12)


@pytest.fixture()
def quiet_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def make_biased_dataset(data1, data2, paired=False):
    """Hand-built biased-pair dataset from plain lists of scalars."""
    a1 = np.asarray(data1, dtype=float).reshape(-1)
    a2 = np.asarray(data2, dtype=float).reshape(-1)
    return CutDataset(a1, a2, paired=paired)
