import numpy as np
import pytest

from ceit.forward import MeshField, triangulate_disk
from ceit.geometry import benchmark_domain, benchmark_ring


@pytest.fixture(scope="session")
def domain():
    return benchmark_domain()


@pytest.fixture(scope="session")
def ring():
    return benchmark_ring()


@pytest.fixture(scope="session")
def mesh20(domain):
    """Coarse unit-test mesh, edge target 1/20."""
    return triangulate_disk(domain, 1.0 / 20.0)


@pytest.fixture(scope="session")
def sigma_one_20(mesh20):
    return MeshField(mesh20, np.ones(mesh20.n_vertices))
