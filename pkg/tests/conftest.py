import numpy as np
import pytest

from mixsem import dataio, studies


@pytest.fixture(scope="session")
def schema():
    return dataio.SchemaConfig.default()


def make_sim(K=1, n=60, seed=0, separation=4.05):
    """(theta, spec, schema, dataset) from the paper-shaped generator."""
    theta, spec, schema = studies.paper_like_parameters(K, separation)
    ds = dataio.simulate(theta, spec, schema, n=n, seed=seed)
    return theta, spec, schema, ds


@pytest.fixture(scope="session")
def sim_k1():
    return make_sim(K=1, n=200, seed=5)


@pytest.fixture(scope="session")
def sim_k2():
    return make_sim(K=2, n=300, seed=9)
